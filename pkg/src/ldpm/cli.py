"""Command-line front end.

    ldpm simulate plan.cfg [--set key=value ...] [--assert] [--plot] [--jobs N]
    ldpm verify {binomial,kov,amplification,attack-indist} ...
    ldpm channel {rr,rr-delta,kary,measure,decompose,embed,compose} ...
    ldpm attack --protocol hst --n 1000 --m 50 --d 8 --adversary rr_plus_one

Exit codes: 0 success, 1 a verified claim failed, 2 bad configuration or
arguments, 3 an asserted failure-rate bound was exceeded.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import analysis, attacks, experiments
from . import channel as ch
from . import protocols as pr
from ._rng import default_seed

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ASSERT = 0, 1, 2, 3

# key -> (parser, description)
CONFIG_KEYS = {
    "protocol": (str, "rr_mean | est_inf | hst | est1 | est2 | raptor | hh | suboptimal_hst"),
    "n": (str, "comma-separated user counts"),
    "m": (str, "comma-separated corruption counts"),
    "d": (str, "comma-separated universe sizes or dimensions"),
    "epsilon": (str, "comma-separated privacy levels"),
    "trials": (int, "Monte Carlo trials per grid point"),
    "seed": (int, "master seed"),
    "metric": (str, "l1 | l2 | linf | abs | verdict | miss"),
    "beta": (float, "failure probability for the error bounds"),
    "source": (str, "uniform | rademacher | point | planted | sphere | fixed"),
    "source_mu": (float, "mean for rademacher and planted sources"),
    "source_value": (int, "value for point sources"),
    "source_path": (str, "CSV dataset for fixed sources"),
    "adversary": (str, "none | input | rr_plus_one | finite_universe | vector_flood"),
    "adaptive": (lambda s: s.strip().lower() in ("1", "true", "yes"), "adversary sees the public string"),
    "value": (int, "replacement value for input manipulation"),
    "k": (int, "hash range for hh"),
    "k_rule": (str, "appendix | main: default hash range rule for hh"),
    "groups": (int, "group count override for raptor"),
    "raptor_beta": (float, "failure probability used to size raptor"),
    "m_budget": (int, "corruption budget built into raptor's threshold"),
    "csv": (str, "output CSV path"),
    "json": (str, "output JSON path"),
    "svg": (str, "output SVG path (with --plot)"),
    "plot_variable": (str, "swept variable on the plot's x axis"),
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = dict(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    return cfg


def typed_config(raw: dict) -> dict:
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for k, v in raw.items():
        try:
            out[k] = CONFIG_KEYS[k][0](v)
        except ValueError:
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    if "protocol" not in out or "n" not in out:
        raise ConfigError("config needs at least 'protocol' and 'n'")
    return out


def _numbers(text, kind):
    try:
        return [kind(float(x)) if kind is int else kind(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def plan_from_config(cfg: dict, seed: int | None = None) -> experiments.ExperimentPlan:
    grids = {"n": _numbers(cfg["n"], int)}
    for key, kind in (("m", int), ("d", int), ("epsilon", float)):
        if key in cfg:
            grids[key] = _numbers(cfg[key], kind)
    source = {"kind": cfg.get("source", "rademacher" if cfg["protocol"] == "rr_mean" else "uniform")}
    if "source_mu" in cfg:
        source["mu"] = cfg["source_mu"]
    if "source_value" in cfg:
        source["value"] = cfg["source_value"]
    if "source_path" in cfg:
        source["path"] = cfg["source_path"]
    extra = {k: cfg[k] for k in ("k", "k_rule", "groups", "raptor_beta", "m_budget", "value") if k in cfg}
    try:
        return experiments.ExperimentPlan(
            protocol=cfg["protocol"], grids=grids, trials=cfg.get("trials", 200),
            metric=cfg.get("metric"), seed=seed if seed is not None else cfg.get("seed", default_seed()),
            source=source, adversary=cfg.get("adversary", "none"), adaptive=cfg.get("adaptive", False),
            beta=cfg.get("beta", 0.05), extra=extra)
    except experiments.PlanError as exc:
        raise ConfigError(str(exc)) from None


def _err(msg):
    print(f"ldpm: {msg}", file=sys.stderr)


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            raw = parse_config_text(fh.read())
        cfg = typed_config(apply_overrides(raw, args.set))
        plan = plan_from_config(cfg, args.seed)
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_CONFIG
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    report = experiments.run_plan(plan, jobs=args.jobs)
    for r in report.rows:
        if r["error"]:
            _err(f"grid point n={r['n']} m={r['m']} d={r['d']} eps={r['epsilon']}: {r['error']}")
    csv_path = cfg.get("csv")
    text = report.to_csv(csv_path)
    if csv_path is None:
        sys.stdout.write(text)
    if cfg.get("json"):
        report.to_json(cfg["json"])
    if args.plot:
        report.plot_svg(cfg.get("svg", "report.svg"), cfg.get("plot_variable", "n"))
    if args.do_assert:
        bad = [r for r in report.rows
               if not r["error"] and not math.isnan(r["fail_ci_hi"]) and r["fail_ci_hi"] > plan.beta]
        if bad:
            for r in bad:
                _err(f"failure rate upper bound {r['fail_ci_hi']:.4g} exceeds beta={plan.beta} "
                     f"at n={r['n']} m={r['m']} d={r['d']} eps={r['epsilon']}")
            return EXIT_ASSERT
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def kov_roundtrip(epsilon: float, trials: int, seed, max_outputs: int = 8, delta: float = 0.0) -> dict:
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, 0
    for t in range(trials):
        k = int(rng.integers(2, max_outputs + 1))
        r, target = ch.random_private_channel(epsilon, k, rng, tight=bool(t % 2))
        try:
            post = ch.kov_decompose(r, target, delta)
        except ch.DecompositionError:
            failures += 1
            continue
        base = ch.rr_channel(target) if delta == 0 else ch.rr_delta_channel(target, delta)
        worst = max(worst, float(ch.compose(post, base).row_tv(r).max()))
    return {"claim": "kov", "parameters": {"epsilon": epsilon, "trials": trials, "delta": delta},
            "margin_or_fraction": worst, "confidence": None,
            "pass": failures == 0 and worst < ch.RECON_TOL, "details": {"failures": failures}}


def cmd_verify(args) -> int:
    if args.claim == "binomial":
        rep = analysis.binomial_claim_verify(args.n, args.m)
        _emit(rep.to_dict())
        if not rep.details["in_range"]:
            return EXIT_OK
        return EXIT_OK if rep.passed else EXIT_FAIL
    if args.claim == "kov":
        doc = kov_roundtrip(args.eps, args.trials, args.seed, args.max_outputs, args.delta)
        _emit(doc)
        return EXIT_OK if doc["pass"] else EXIT_FAIL
    if args.claim == "amplification":
        chans = [ch.kary_rr_channel(args.d, args.eps)]
        rep = analysis.embedding_privacy_survey(chans, args.d, args.num_h, args.seed)
        _emit(rep.to_dict())
        return EXIT_OK if rep.passed else EXIT_FAIL
    if args.claim == "attack-indist":
        try:
            _, mu = attacks.mu_threshold(args.m, args.n, args.eps)
        except attacks.AttackError as exc:
            _err(str(exc))
            return EXIT_CONFIG
        p = pr.RRMean(args.n, args.eps)
        rep = analysis.attack_indistinguishability_test(
            p, attacks.RRPlusOne(), pr.Rademacher(mu), pr.Rademacher(0.0), args.trials, args.seed, args.m)
        _emit(rep.to_dict())
        return EXIT_OK if rep.passed else EXIT_FAIL
    _err(f"unknown claim {args.claim!r}")
    return EXIT_CONFIG


# ---------------------------------------------------------------------------
# channel


def _read_channel(path):
    text = sys.stdin.read() if path in (None, "-") else open(path).read()
    return ch.Channel.from_json(text)


def _channel_doc(c: ch.Channel) -> dict:
    doc = c.to_dict()
    p = ch.measure_privacy(c)
    doc["privacy"] = {"epsilon": "inf" if p.is_infinite else p.epsilon}
    return doc


def cmd_channel(args) -> int:
    try:
        if args.op == "rr":
            c = ch.rr_channel(args.eps, rescaled=args.rescaled)
        elif args.op == "rr-delta":
            c = ch.rr_delta_channel(args.eps, args.delta)
        elif args.op == "kary":
            c = ch.kary_rr_channel(args.d, args.eps)
        elif args.op == "measure":
            p = ch.measure_privacy(_read_channel(args.input), args.eps)
            _emit(p.to_dict())
            return EXIT_OK
        elif args.op == "decompose":
            c = ch.kov_decompose(_read_channel(args.input), args.eps, args.delta)
        elif args.op == "embed":
            r = _read_channel(args.input)
            d = args.d or r.input_size
            h = ch.SubsetH(d, frozenset(int(x) for x in args.H.split(",")))
            c = ch.embed_channel(r, h)
        elif args.op == "compose":
            c = ch.compose(_read_channel(args.post), _read_channel(args.base))
        else:
            _err(f"unknown channel operation {args.op!r}")
            return EXIT_CONFIG
    except (ch.ChannelError, ValueError, OSError, KeyError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    _emit(_channel_doc(c))
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack


def cmd_attack(args) -> int:
    try:
        proto = experiments.make_protocol(args.protocol, args.n, args.d, args.eps,
                                          **({"k": args.k} if args.k else {}))
        src = {"kind": args.source}
        if args.mu is not None:
            src["mu"] = args.mu
        if args.value is not None:
            src["value"] = args.value
        source = experiments.make_source(src, proto)
        adv_kw = {"d": proto.d}
        if args.value is not None:
            adv_kw["value"] = args.value
        adv = attacks.make_adversary(args.adversary, **adv_kw)
        res = attacks.run_manip_game(proto, source, adv, attacks.GameConfig(args.n, args.m, args.adaptive, args.seed))
    except (pr.ProtocolError, attacks.AttackError, experiments.PlanError, ch.ChannelError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    doc = res.to_dict()
    if proto.output_kind in ("scalar", "vector"):
        doc["manipulation_term"] = np.atleast_1d(res.manipulation_term()).tolist()
    _emit(doc)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    p = argparse.ArgumentParser(prog="ldpm", description="LDP protocols under manipulation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a Monte Carlo sweep from a config file")
    s.add_argument("config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--plot", action="store_true")
    s.add_argument("--assert", dest="do_assert", action="store_true",
                   help="exit 3 if a failure-rate upper bound exceeds beta")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="check one claim and print a JSON report")
    v.add_argument("claim", choices=["binomial", "kov", "amplification", "attack-indist"])
    v.add_argument("--n", type=int, default=931)
    v.add_argument("--m", type=int, default=0)
    v.add_argument("--d", type=int, default=256)
    v.add_argument("--eps", type=float, default=1.0)
    v.add_argument("--delta", type=float, default=0.0)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--num-h", type=int, default=200)
    v.add_argument("--max-outputs", type=int, default=8)
    v.add_argument("--seed", type=int, default=seed)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("channel", help="build, measure and transform channels (JSON in/out)")
    c.add_argument("op", choices=["rr", "rr-delta", "kary", "measure", "decompose", "embed", "compose"])
    c.add_argument("--eps", type=float, default=None)
    c.add_argument("--delta", type=float, default=0.0)
    c.add_argument("--d", type=int, default=None)
    c.add_argument("--H", default=None, help="comma-separated members of H")
    c.add_argument("--rescaled", action="store_true")
    c.add_argument("--input", "-i", default=None, help="channel JSON file (default stdin)")
    c.add_argument("--post", default=None)
    c.add_argument("--base", default=None)
    c.set_defaults(func=cmd_channel)

    a = sub.add_parser("attack", help="play one manipulation game and dump the result")
    a.add_argument("--protocol", default="rr_mean")
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--m", type=int, default=0)
    a.add_argument("--d", type=int, default=1)
    a.add_argument("--eps", type=float, default=1.0)
    a.add_argument("--k", type=int, default=None)
    a.add_argument("--source", default="uniform")
    a.add_argument("--mu", type=float, default=None)
    a.add_argument("--value", type=int, default=None)
    a.add_argument("--adversary", default="rr_plus_one")
    a.add_argument("--adaptive", action="store_true")
    a.add_argument("--seed", type=int, default=seed)
    a.set_defaults(func=cmd_attack)
    return p


def _check_channel_args(args):
    need_eps = args.op in ("rr", "rr-delta", "kary", "decompose")
    if need_eps and args.eps is None:
        return "--eps is required"
    if args.op == "kary" and not args.d:
        return "--d is required"
    if args.op == "embed" and not args.H:
        return "--H is required"
    if args.op == "compose" and not (args.post and args.base):
        return "--post and --base are required"
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "channel":
        msg = _check_channel_args(args)
        if msg:
            _err(msg)
            return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
