"""Command-line interface.

Exit status: 0 on success, 2 for configuration or input errors, 3 when a
numerical procedure fails on valid input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import estimators, harness, models
from .errors import ConfigError, QuantestInputError, QuantestNumericalError
from .quantizer import Quantizer, make_custom, make_midriser, optimize_quantizer, sign_quantizer

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


# ---------------------------------------------------------------------------
# YAML with line numbers
# ---------------------------------------------------------------------------


class _Doc:
    """Parsed YAML mapping plus the source line of each top-level key."""

    def __init__(self, path: str):
        self.path = path
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read: {exc.strerror}") from None
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{path}:{mark.line + 1}" if mark else path
            raise ConfigError(f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
        if self.data is None:
            self.data = {}
        if not isinstance(self.data, dict):
            raise ConfigError(f"{path}:1: top level must be a mapping of field: value")
        self.lines = {}
        if isinstance(node, yaml.MappingNode):
            for k, _ in node.value:
                self.lines[k.value] = k.start_mark.line + 1

    def error(self, exc: Exception) -> ConfigError:
        msg = str(exc)
        field = msg.split(":", 1)[0].strip()
        line = self.lines.get(field)
        if line is None:
            for name, ln in self.lines.items():
                if name in msg:
                    field, line = name, ln
                    break
        if line is not None:
            if msg.startswith(field + ":"):
                msg = msg[len(field) + 1 :].strip()
            return ConfigError(f"{self.path}:{line}: field '{field}': {msg}")
        return ConfigError(f"{self.path}: {msg}")


def _emit(obj, as_json: bool, text: str):
    if as_json:
        print(json.dumps(obj, indent=2, default=_jsonable))
    else:
        print(text)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_quantizer_opt(args) -> int:
    q, rho = optimize_quantizer(args.bits, args.sigma, args.mode)
    pos = q.thresholds[q.thresholds > 0]
    rec = {"bits": args.bits, "mode": args.mode, "sigma": args.sigma, "rho": rho, "thresholds": q.thresholds}
    if args.mode == "uniform":
        delta = q.delta if q.delta is not None else 2.0 * args.sigma
        rec["delta"] = delta
        text = f"bits={args.bits} mode=uniform delta={delta:.6f} rho={rho:.6f}"
    else:
        text = f"bits={args.bits} mode=free thresholds=[{', '.join(f'{t:.6f}' for t in pos)}] rho={rho:.6f}"
        rec["positive_thresholds"] = pos
    _emit(rec, args.json, text)
    return EXIT_OK


def _config_from(args, extra: dict) -> harness.SweepConfig:
    data = {}
    doc = None
    if getattr(args, "config", None):
        doc = _Doc(args.config)
        data.update(doc.data)
    data.update({k: v for k, v in extra.items() if v is not None})
    try:
        return harness.SweepConfig.from_dict(data)
    except ConfigError as exc:
        raise (doc.error(exc) if doc else exc) from None


def cmd_crb(args) -> int:
    snr = args.snr
    extra = {
        "scenario": args.scenario,
        "axis": "snr",
        "axis_values": [snr] if snr is not None else None,
        "bits": args.bits,
        "n_pilots": args.N,
        "snr_unit": args.snr_unit,
        "trials": 1,
    }
    if args.config is None and snr is None:
        raise ConfigError("crb: --snr is required without --config")
    cfg = _config_from(args, extra)
    rows = []
    for v in cfg.axis_values:
        res = harness.scenario_crb(cfg, v)
        ctx = harness._context(cfg, v)
        rec = {"scenario": cfg.scenario, "snr": v, "bits": harness._fmt(ctx.bits), "crb": res["total"],
               "per_param": dict(zip(res["names"], np.asarray(res["per_param"]).tolist())),
               "singular": res["singular"]}
        if cfg.scenario in ("siso1tap", "blind"):
            rec["crb_over_h2"] = res["total"] / float(ctx.truth[0]) ** 2
        rows.append(rec)
    if args.json:
        _emit(rows, True, "")
    else:
        for rec in rows:
            line = f"scenario={rec['scenario']} snr={rec['snr']:g} bits={rec['bits']} crb={rec['crb']:.9g}"
            if "crb_over_h2" in rec:
                line += f" crb/h^2={rec['crb_over_h2']:.9g}"
            if rec["singular"]:
                line += " (singular Fisher information)"
            print(line)
    return EXIT_OK


def _quantizer_from(spec, sigma: float) -> Quantizer:
    if spec is None:
        return sign_quantizer()
    if not isinstance(spec, dict):
        raise ConfigError("quantizer: expected a mapping")
    if "thresholds" in spec:
        return make_custom(spec["thresholds"], spec.get("representatives"))
    bits = int(spec.get("bits", 1))
    if "delta" in spec:
        return make_midriser(bits, float(spec["delta"]))
    return optimize_quantizer(bits, sigma, spec.get("mode", "uniform"))[0]


def cmd_estimate(args) -> int:
    doc = _Doc(args.input)
    d = doc.data
    try:
        sigma = float(d.get("sigma", 1.0))
        q = _quantizer_from(d.get("quantizer"), sigma)
        method = d.get("estimator", "em")
        if "r" in d:
            r = np.asarray(d["r"], dtype=int)
        elif "y" in d:
            r = q.index(np.asarray(d["y"], dtype=float))
        else:
            raise ConfigError("r: provide cell indices 'r' or analog samples 'y'")
        if r.size and (r.min() < 0 or r.max() >= q.n_cells):
            raise ConfigError(f"r: cell indices must lie in 0..{q.n_cells - 1}")
    except (ValueError, TypeError) as exc:
        raise doc.error(exc) from None
    sc = args.scenario
    out = {"scenario": sc}
    cfg = estimators.EmConfig(max_iters=int(d.get("max_iters", 500)), tol=float(d.get("tol", 1e-8)))
    if sc == "blind":
        h0 = float(d.get("h0", 1.0))
        s0 = float(d.get("sigma0", sigma))
        tr = estimators.em_blind_siso(r.ravel(), q, s0, h0, cfg)
        out.update(h=tr.theta_hat[0], sigma=tr.theta_hat[1], iterations=tr.iterations, converged=tr.converged)
    else:
        if "x" not in d:
            raise doc.error(ConfigError("x: pilot sequence required"))
        x = np.asarray(d["x"], dtype=float)
        if sc == "siso1tap":
            model = models.build_siso_model(x)
        elif sc == "siso2tap":
            model = models.build_two_tap_model(x)
            if r.size == x.size:
                r = r[1:]
        elif sc in ("mimo2x2", "mimoNxN"):
            n_rx = int(d.get("n_rx", x.shape[0]))
            model = models.build_mimo_model(x, n_rx)
            r = r.reshape(n_rx, -1).ravel(order="F") if r.ndim == 2 else r
        else:
            raise ConfigError(f"estimate: unsupported scenario {sc!r}")
        prior = estimators.Prior()
        if isinstance(d.get("prior"), dict) and d["prior"].get("kind") == "gaussian":
            prior = estimators.Prior.gaussian(d["prior"]["cov"])
        if method == "closed_form":
            if q.n_cells != 2 or q.thresholds[0] != 0:
                raise ConfigError("estimator: closed form needs a sign quantizer")
            signs = 2.0 * r - 1.0
            if sc == "siso1tap":
                theta = np.array([estimators.ml_siso_one_bit(signs, x, sigma)])
            elif sc == "siso2tap":
                theta = np.array(estimators.ml_siso_two_tap(np.concatenate([[1.0], signs]), x, sigma))
            elif sc == "mimo2x2":
                theta = estimators.ml_mimo_2x2_one_bit(signs.reshape(2, -1, order="F"), x, sigma).ravel(order="F")
            else:
                raise ConfigError(f"estimator: no closed form for {sc}")
            out.update(theta=theta)
        else:
            tr = estimators.em_pilot(model, q, r, sigma, prior, cfg=cfg)
            out.update(theta=tr.theta_hat, iterations=tr.iterations, converged=tr.converged,
                       loglik=float(tr.loglik[-1]))
    if args.json:
        _emit(out, True, "")
    else:
        print(" ".join(f"{k}={_short(v)}" for k, v in out.items()))
    return EXIT_OK


def _short(v):
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(f"{x:.9g}" for x in v) + "]"
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def cmd_sweep(args) -> int:
    extra = {"trials": args.trials, "seed": args.seed}
    cfg = _config_from(args, extra)
    rows = harness.run_sweep(cfg)
    text = harness.rows_to_csv(rows)
    out = args.out or cfg.output
    if out:
        Path(out).write_text(text)
        if args.json:
            Path(out).with_suffix(".json").write_text(harness.rows_to_json(rows))
    else:
        sys.stdout.write(text)
    if args.json and not out:
        print(harness.rows_to_json(rows))
    return EXIT_OK


def cmd_gnss_crb(args) -> int:
    from .gnss import GnssScenario, multipath_array_scenario, gnss_crb_report

    data = {}
    doc = None
    if args.config:
        doc = _Doc(args.config)
        data = dict(doc.data)
    try:
        bits = data.pop("bits", [1, 2, 3, 4, 8])
        bits = [bits] if isinstance(bits, int) else list(bits)
        if args.bits:
            bits = args.bits
        free = data.pop("free", None)
        mode = data.pop("quantizer_mode", "uniform")
        scen = GnssScenario.from_dict(data) if data else multipath_array_scenario()
        if args.snr is not None:
            scen = scen.with_snr(args.snr)
    except (QuantestInputError, TypeError, KeyError) as exc:
        raise (doc.error(exc) if doc else ConfigError(str(exc))) from None
    rows = []
    for b in bits:
        q = optimize_quantizer(int(b), 1.0, mode)[0].scaled(scen.sigma)
        rep = gnss_crb_report(scen, q, free)
        rows.append({"bits": int(b), "snr_db": scen.snr_db, **rep.to_dict()})
    if args.json:
        _emit(rows, True, "")
    else:
        names = [k for k in rows[0] if k not in ("bits", "snr_db")]
        print("bits," + ",".join(f"{n}[{rows[0][n]['unit'] or '1'}]" for n in names))
        for row in rows:
            print(f"{row['bits']}," + ",".join(f"{row[n]['sqrt_crb']:.9g}" for n in names))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base RNG seed")
    common.add_argument("--trials", type=int, default=argparse.SUPPRESS, help="Monte Carlo trials per point")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="JSON output")

    p = argparse.ArgumentParser(prog="quantest", description="Estimation and bounds from quantized observations.")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--json", action="store_true", default=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("quantizer-opt", parents=[common], help="optimal quantizer for a bit budget")
    s.add_argument("--bits", type=int, required=True)
    s.add_argument("--mode", choices=("uniform", "free"), default="uniform")
    s.add_argument("--sigma", type=float, default=1.0)
    s.set_defaults(func=cmd_quantizer_opt)

    s = sub.add_parser("crb", parents=[common], help="Cramer-Rao bound of a scenario")
    s.add_argument("--scenario", choices=harness.SCENARIOS)
    s.add_argument("--config")
    s.add_argument("--snr", type=float)
    s.add_argument("--snr-unit", choices=("db", "linear"), default=None,
                   help="unit of --snr (default: linear for siso/blind, dB otherwise)")
    s.add_argument("--bits")
    s.add_argument("-N", type=int, dest="N", help="pilot length")
    s.set_defaults(func=cmd_crb)

    s = sub.add_parser("estimate", parents=[common], help="estimate parameters from a quantized record")
    s.add_argument("--scenario", required=True, choices=("siso1tap", "siso2tap", "blind", "mimo2x2", "mimoNxN"))
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep to CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gnss-crb", parents=[common], help="GNSS CRB table over bit resolutions")
    s.add_argument("--config")
    s.add_argument("--bits", type=int, nargs="*")
    s.add_argument("--snr", type=float, help="override SNR [dB]")
    s.set_defaults(func=cmd_gnss_crb)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "crb" and args.snr_unit is None:
        args.snr_unit = "linear" if args.scenario in ("siso1tap", "siso2tap", "blind") else "db"
    try:
        return args.func(args)
    except QuantestInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except QuantestNumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
