"""Command-line front end.

Every command reads one JSON config (``--config``), applies overrides
(``--set dotted.path=value``, ``--seed``, ``--out``, ``--svg``), validates
the result, echoes it to ``<out>/config.json`` and writes CSV output there.
Exit codes: 0 success, 2 config error, 3 precondition error, 4 search
exhaustion.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

import jsonschema
import numpy as np

from . import analysis, orbits, scenarios, svg
from .dynamics import BurnPolicy, MarketInstance, MevSequence, simulate
from .errors import PreconditionError, SearchExhausted

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_SEARCH = 0, 2, 3, 4

# --- schema -----------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_INT1 = {"type": "integer", "minimum": 1}
_RULE = {"type": "string", "enum": ["h", "h1", "h2", "h3", "full", "miner_scaled",
                                    "user_scaled", "plain"]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_DIST = {
    "oneOf": [
        _obj({"kind": {"const": "beta"}, "a": _POS, "b": _POS}, ["kind", "a", "b"]),
        _obj({"kind": {"const": "uniform"}, "lo": _UNIT, "hi": _UNIT}, ["kind", "lo", "hi"]),
        _obj({"kind": {"const": "truncnormal"}, "mu": _NUM, "sigma2": _POS},
             ["kind", "mu", "sigma2"]),
    ]
}
_BURN = _obj({"mode": {"enum": ["none", "constant", "sampled"]}, "k": _POS, "lo": _POS,
              "hi": _POS}, ["mode"])
_MARKET = _obj({"users": _DIST, "miners": _DIST, "w": _POS, "burn": _BURN},
               ["users", "miners", "w"])
_MEV = _obj({"mode": {"enum": ["constant", "series", "sampled"]}, "m": _POS,
             "values": {"type": "array", "items": _POS}, "lo": _POS, "hi": _POS}, ["mode"])
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_COMMON = {"out": {"type": "string"}, "seed": {"type": "integer", "minimum": 0},
           "svg": {"type": "boolean"}}

SCHEMAS = {
    "simulate": _obj({**_COMMON, "market": _MARKET, "rule": _RULE, "lambda0": _NUM,
                      "eta": _POS, "T": _INT1, "mev": _MEV}),
    "thresholds": _obj({**_COMMON, "market": _MARKET, "eta": _POS,
                        "precision": _obj({"grid_n": {"type": "integer", "minimum": 10000}})}),
    "bifurcate": _obj({**_COMMON, "axis": {"enum": ["eta", "range"]}, "market": _MARKET,
                       "rule": _RULE, "lambda0": _NUM, "burn_in": _INT1, "n_record": _INT1,
                       "start": _NUM, "stop": _NUM,
                       "points": {"type": "integer", "minimum": 2},
                       "eta": _POS, "w": _POS, "users_center": _UNIT, "miners_center": _UNIT}),
    "periods": _obj({**_COMMON, "market": _MARKET, "rule": _RULE, "eta": _POS,
                     "k": {"oneOf": [_INT1, {"type": "array", "items": _INT1, "minItems": 1}]},
                     "precision": _obj({"grid_n": {"type": ["integer", "null"], "minimum": 1000},
                                        "tol": _POS})}),
    "chaos-witness": _obj({**_COMMON, "eta": _POS, "w": _POS,
                           "a0": {"type": "number", "exclusiveMinimum": 0,
                                  "exclusiveMaximum": 1},
                           "search_steps": _INT1}),
    "scenario": _obj({
        **_COMMON,
        "kind": {"enum": ["regime", "stress", "burn", "rules"]},
        "lambda0": _NUM,
        "regime": _obj({"theta": _NUM, "T": _INT1, "epoch_len": _INT1,
                        "regime1": _obj({"market": _MARKET, "eta": _POS}, ["market", "eta"]),
                        "regime2": _obj({"market": _MARKET, "eta": _POS}, ["market", "eta"])}),
        "stress": _obj({"n_epochs": _INT1, "blocks_per_epoch": _INT1, "eta_range": _PAIR,
                        "w_range": _PAIR, "beta_perturb_every": _INT1,
                        "beta_param_ranges": {"type": "array", "items": _PAIR,
                                              "minItems": 4, "maxItems": 4}}),
        "burn": _obj({"market": _MARKET, "burn": _BURN, "eta": _POS, "T": _INT1}),
        "rules": _obj({"market": _MARKET, "eta": _POS, "T": _INT1}),
    }),
}

# --- defaults ---------------------------------------------------------------

NORMAL_MARKET = {
    "users": {"kind": "truncnormal", "mu": 0.4, "sigma2": 0.01},
    "miners": {"kind": "truncnormal", "mu": 0.5, "sigma2": 0.01},
    "w": 1.6,
}


def _regime_market(r):
    inst = r.instance
    return {"users": inst.users.to_dict(), "miners": inst.miners.to_dict(), "w": inst.w}


_R1, _R2 = scenarios.default_regimes()
_SC = scenarios.StressConfig()

DEFAULTS = {
    "simulate": {"market": NORMAL_MARKET, "rule": "h", "lambda0": 0.3, "eta": 0.5,
                 "T": 1000, "mev": {"mode": "constant", "m": 1.0}},
    "thresholds": {"market": NORMAL_MARKET, "eta": 0.5, "precision": {"grid_n": 10**6}},
    "bifurcate": {"axis": "eta", "market": NORMAL_MARKET, "rule": "h", "lambda0": 0.3,
                  "burn_in": 200, "n_record": 200, "start": 0.05, "stop": 3.0, "points": 400,
                  "eta": 1.5, "w": 1.0, "users_center": 0.5, "miners_center": 0.4},
    "periods": {"market": NORMAL_MARKET, "rule": "h", "eta": 0.6, "k": [1, 2, 3, 4, 5, 6, 7],
                "precision": {"grid_n": None, "tol": 1e-10}},
    "chaos-witness": {"eta": 1.0, "w": 1.0, "a0": 0.1, "search_steps": 200},
    "scenario": {"kind": "regime", "lambda0": 0.3},
}

SCENARIO_DEFAULTS = {
    "regime": {"theta": 0.408, "T": 5000, "epoch_len": 50,
               "regime1": {"market": _regime_market(_R1), "eta": _R1.eta},
               "regime2": {"market": _regime_market(_R2), "eta": _R2.eta}},
    "stress": {"n_epochs": _SC.n_epochs, "blocks_per_epoch": _SC.blocks_per_epoch,
               "eta_range": list(_SC.eta_range), "w_range": list(_SC.w_range),
               "beta_perturb_every": _SC.beta_perturb_every,
               "beta_param_ranges": [list(r) for r in _SC.beta_param_ranges]},
    "burn": {"market": NORMAL_MARKET, "burn": {"mode": "sampled", "lo": 0.8, "hi": 0.95},
             "eta": 0.5, "T": 1000},
    "rules": {"market": NORMAL_MARKET, "eta": 0.5, "T": 200},
}


class ConfigError(Exception):
    pass


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        # tagged records (distributions, burn and MEV policies) replace wholesale
        tagged = isinstance(val, dict) and ("kind" in val or "mode" in val)
        if isinstance(val, dict) and isinstance(out.get(key), dict) and not tagged:
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _set_path(cfg, dotted, raw):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        nxt = node.setdefault(key, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {dotted}: {key} is not an object")
        node = nxt
    node[keys[-1]] = value


def build_config(command, args):
    """Defaults <- config file <- --set <- dedicated flags, then validation."""
    user = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects dotted.path=value, got {item!r}")
        path, raw = item.split("=", 1)
        _set_path(user, path, raw)
    if args.seed is not None:
        user["seed"] = args.seed
    if args.out is not None:
        user["out"] = args.out
    if args.svg:
        user["svg"] = True
    base = _merge({"out": "out", "seed": 0, "svg": False}, DEFAULTS[command])
    if command == "scenario":
        kind = user.get("kind", base["kind"])
        if kind in SCENARIO_DEFAULTS:
            base[kind] = SCENARIO_DEFAULTS[kind]
    cfg = _merge(base, user)
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return cfg


# --- output helpers -----------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _prepare_out(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _market(record, seed):
    return MarketInstance.from_dict(record, seed)


def _mev(record, seed):
    mode = record["mode"]
    if mode == "constant":
        return MevSequence.constant(record.get("m", 1.0))
    if mode == "series":
        return MevSequence.series(record.get("values", []))
    return MevSequence.sampled(record["lo"], record["hi"], seed)


# --- commands ---------------------------------------------------------------


def cmd_simulate(cfg):
    out = _prepare_out(cfg)
    inst = _market(cfg["market"], cfg["seed"])
    tr = simulate(inst, cfg["rule"], cfg["lambda0"], cfg["eta"],
                  mev=_mev(cfg["mev"], cfg["seed"] + 1), T=cfg["T"])
    write_csv(os.path.join(out, "trace.csv"), ["t", "lambda", "delta", "eta_t"], tr.rows())
    if cfg["svg"]:
        ts = list(range(len(tr.lambdas)))
        svg.line_chart(os.path.join(out, "trace.svg"),
                       [("lambda", ts, tr.lambdas), ("delta", ts, tr.deltas)],
                       title=f"rule {tr.rule.label}, eta={cfg['eta']}")
    print(f"wrote {len(tr.lambdas)} rows; final lambda={float(tr.lambdas[-1])!r}")
    return EXIT_OK


def cmd_thresholds(cfg):
    out = _prepare_out(cfg)
    inst = _market(cfg["market"], cfg["seed"])
    rep = analysis.report(inst, cfg["eta"], cfg["precision"]["grid_n"])
    text = rep.to_text()
    with open(os.path.join(out, "thresholds.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    rec = rep.record()
    write_csv(os.path.join(out, "thresholds.csv"), list(rec), [list(rec.values())])
    print(text, end="")
    return EXIT_OK


def cmd_bifurcate(cfg):
    out = _prepare_out(cfg)
    params = np.linspace(cfg["start"], cfg["stop"], cfg["points"])
    if cfg["axis"] == "eta":
        case = orbits.eta_axis(_market(cfg["market"], cfg["seed"]))
    else:
        case = orbits.range_axis(cfg["eta"], cfg["w"], cfg["users_center"],
                                 cfg["miners_center"])
    table = orbits.bifurcation_scan(case, params, cfg["rule"], cfg["burn_in"],
                                    cfg["n_record"], cfg["lambda0"])
    write_csv(os.path.join(out, "bifurcation.csv"), ["param", "t", "lambda", "delta"],
              table.rows())
    if cfg["svg"]:
        xs = np.repeat(table.params, table.n_record)
        svg.scatter_chart(os.path.join(out, "bifurcation.svg"), xs, table.lambdas.ravel(),
                          title=f"bifurcation over {cfg['axis']}", xlabel=cfg["axis"],
                          ylabel="lambda")
    print(f"scanned {len(params)} values of {cfg['axis']}")
    return EXIT_OK


def cmd_periods(cfg):
    out = _prepare_out(cfg)
    inst = _market(cfg["market"], cfg["seed"])
    ks = cfg["k"] if isinstance(cfg["k"], list) else [cfg["k"]]
    prec = cfg["precision"]
    rows = []
    for k in ks:
        rep = orbits.find_periodic_points(inst, cfg["rule"], cfg["eta"], k,
                                          prec["grid_n"], prec["tol"])
        rows.extend(rep.rows())
        found = rep.with_least_period(k)
        print(f"k={k}: {len(rep.fixed_points)} solutions of h^k(x)=x, "
              f"{len(found)} of least period {k}")
    write_csv(os.path.join(out, "periods.csv"), ["k", "fixed_point", "least_period", "stable"],
              rows)
    return EXIT_OK


def cmd_chaos_witness(cfg):
    out = _prepare_out(cfg)
    wit = orbits.chaos_witness(cfg["eta"], cfg["w"], cfg["a0"], cfg["search_steps"])
    rec = wit.record()
    write_csv(os.path.join(out, "witness.csv"), list(rec), [list(rec.values())])
    for key in ("a", "b", "lambda0", "lambda1", "lambda2", "lambda3"):
        print(f"{key}={rec[key]!r}")
    for check, ok in wit.recheck().items():
        print(f"{check}: {'ok' if ok else 'FAILED'}")
    return EXIT_OK


def _scenario_trace_csv(out, result):
    write_csv(os.path.join(out, "trace.csv"), ["t", "lambda", "delta", "eta_t", "regime"],
              result.trace_rows())
    keys = ["epoch", "eta", "w", "a_u", "b_u", "a_m", "b_m"]
    write_csv(os.path.join(out, "epochs.csv"), keys,
              ([rec[k] for k in keys] for rec in result.epoch_rows()))


def cmd_scenario(cfg):
    out = _prepare_out(cfg)
    kind = cfg["kind"]
    if kind not in cfg:
        raise ConfigError(f"scenario kind {kind!r} needs a {kind!r} section")
    sec = cfg[kind]
    seed = cfg["seed"]
    if kind == "rules":
        traces = scenarios.run_rule_comparison(_market(sec["market"], seed), sec["eta"],
                                               cfg["lambda0"], sec["T"])
        labels = [r.label for r in traces]
        cols = [tr.lambdas for tr in traces.values()]
        write_csv(os.path.join(out, "rules.csv"), ["t"] + labels,
                  ([t] + [c[t] for c in cols] for t in range(sec["T"] + 1)))
        if cfg["svg"]:
            ts = list(range(sec["T"] + 1))
            svg.line_chart(os.path.join(out, "rules.svg"),
                           [(lab, ts, c) for lab, c in zip(labels, cols)],
                           title="update rules", ylabel="lambda")
        print("wrote rules.csv")
        return EXIT_OK
    if kind == "regime":
        regs = [scenarios.Regime(_market(sec[n]["market"], seed), sec[n]["eta"])
                for n in ("regime1", "regime2")]
        rcfg = scenarios.RegimeConfig(regs[0], regs[1], sec["theta"], sec["T"],
                                      sec["epoch_len"])
        result = scenarios.run_regime(rcfg, cfg["lambda0"], seed)
    elif kind == "stress":
        scfg = scenarios.StressConfig(
            sec["n_epochs"], sec["blocks_per_epoch"], tuple(sec["eta_range"]),
            tuple(sec["w_range"]), sec["beta_perturb_every"],
            tuple(tuple(r) for r in sec["beta_param_ranges"]), seed)
        result = scenarios.run_stress(scfg, cfg["lambda0"])
    else:
        b = sec["burn"]
        burn = (BurnPolicy.constant(b["k"]) if b["mode"] == "constant"
                else BurnPolicy.sampled(b["lo"], b["hi"], seed) if b["mode"] == "sampled"
                else BurnPolicy.none())
        result = scenarios.run_burn(_market(sec["market"], seed), burn, sec["eta"],
                                    cfg["lambda0"], sec["T"], seed)
    _scenario_trace_csv(out, result)
    if cfg["svg"]:
        ts = list(range(len(result.trace.lambdas)))
        svg.line_chart(os.path.join(out, "trace.svg"),
                       [("lambda", ts, result.trace.lambdas), ("delta", ts, result.trace.deltas)],
                       title=f"{kind} scenario")
    for key, val in result.summary().items():
        print(f"{key}={val!r}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "thresholds": cmd_thresholds,
    "bifurcate": cmd_bifurcate,
    "periods": cmd_periods,
    "chaos-witness": cmd_chaos_witness,
    "scenario": cmd_scenario,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="lambdamev",
                                     description="Dynamic MEV extraction-rate simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
        p.add_argument("--svg", action="store_true", help="also write SVG charts")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config entry by dotted path; VALUE is JSON")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = build_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SearchExhausted as exc:
        print(f"search exhausted: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except (PreconditionError, ValueError, RuntimeError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
