"""Command-line entry point.

Config files are plain ``key = value`` lines. ``#`` starts a comment, blank
lines are ignored, keys are ``ScenarioConfig`` field names plus the
adversary keys ``adversary``, ``crash_at``, ``extra_delay``, ``stop_at`` and
``restart_times`` (comma separated). Command-line flags override the file.

    n = 7
    f = 2
    backend = rorqual
    adversary = appendix-a
    link_mode = fixed
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics
from .scenario import ConfigError, ScenarioConfig, make_adversary, run
from .simnet import write_trace

log = logging.getLogger(__name__)

_INT = {"n", "f", "rho", "seed", "block_size", "max_rounds"}
_FLOAT = {"delta", "small_delta", "gst", "duration", "wave_timeout", "setup_grace",
          "pre_gst_max_delay", "drain"}
_BOOL = {"leader_wait", "vote_to_all", "keep_trace"}
_STR = {"backend", "parent_policy", "link_mode", "scheme"}
_ADV = {"adversary", "crash_at", "extra_delay", "stop_at", "restart_times"}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in _INT | _FLOAT | _BOOL | _STR | _ADV:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _convert(key: str, value: str):
    try:
        if key in _INT:
            return None if value.lower() == "none" else int(value)
        if key in _FLOAT:
            return float(value)
        if key in _BOOL:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def build_config(raw: dict) -> ScenarioConfig:
    """Turn parsed ``key = value`` pairs into a validated config."""
    fields = {k: _convert(k, v) for k, v in raw.items() if k not in _ADV}
    base = ScenarioConfig()
    n = fields.get("n", base.n)
    f = fields.get("f", base.f)
    params = {}
    for k in ("crash_at", "extra_delay", "stop_at"):
        if k in raw:
            params[k] = _convert_float(k, raw[k])
    if "restart_times" in raw:
        params["restart_times"] = tuple(_convert_float("restart_times", x) for x in raw["restart_times"].split(","))
    fields["adversary"] = make_adversary(raw.get("adversary", "none"), n, f, **params)
    return ScenarioConfig(**fields)


def _convert_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def load_raw(path, overrides: dict) -> dict:
    raw = parse_config_text(Path(path).read_text()) if path else {}
    raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    return raw


def load_config(path, overrides: dict) -> ScenarioConfig:
    return build_config(load_raw(path, overrides))


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("n", "f", "delta", "gst", "seed", "backend", "adversary")}


def _write_csv(path: Path, rows: list[dict]) -> None:
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        w.writerows(rows)


def _run_row(cfg: ScenarioConfig) -> tuple[dict, list[str]]:
    res = run(cfg)
    return metrics.summary_row(res), metrics.check_invariants(res).violations


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run(cfg)
    _write_csv(out / "metrics.csv", [metrics.summary_row(res)])
    lat_rows = []
    all_lat = metrics.payload_latencies(res, "all")
    certs = metrics.cert_latencies(res) if cfg.backend == "pull" else {}
    for key, lat in metrics.payload_latencies(res).items():
        lat_rows.append({
            "source": key[0], "round": key[1],
            "sent": f"{res.recorder.dispersals[key][0]:.6f}",
            "latency": "" if lat is None else f"{lat:.6f}",
            "latency_all": "" if all_lat[key] is None else f"{all_lat[key]:.6f}",
            "cert_latency": "" if certs.get(key) is None else f"{certs[key]:.6f}",
        })
    _write_csv(out / "latency.csv", lat_rows)
    round_rows = [
        {"peer": p, "round": r, "duration": f"{d:.6f}"}
        for p, series in metrics.round_durations(res).items() for r, d in series
    ]
    _write_csv(out / "rounds.csv", round_rows)
    for p in res.correct:
        (out / f"dag_{p}.edges").write_text(res.peers[p].dag.export_edges())
    if cfg.keep_trace:
        write_trace(res.net.trace, out / "trace.txt")
    rep = metrics.check_invariants(res)
    for v in rep.violations:
        print("VIOLATION", v)
    print(f"{len(res.recorder.dispersals)} vertices, {res.events} events, results in {out}")
    return 0 if rep.ok else 1


def cmd_sweep(args) -> int:
    raw = load_raw(args.config, _overrides(args))
    raw["keep_trace"] = "false"
    cfgs = []
    for n in args.ns:
        for seed in range(args.seeds):
            cfg = build_config({**raw, "n": str(n), "f": str((n - 1) // 3)})
            cfgs.append(cfg.replace(seed=cfg.seed + seed))
    results = _map(_run_row, cfgs, args.jobs)
    rows = [r for r, _ in results]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", rows)
    if len(set(args.ns)) > 1:
        per_n = {}
        for r in rows:
            per_n.setdefault(r["n"], []).append(float(r["bytes_per_vertex"]))
        ns = sorted(per_n)
        exp = metrics.fit_exponent(ns, [sum(per_n[n]) / len(per_n[n]) for n in ns])
        print(f"bytes-per-vertex exponent over n={ns}: {exp:.3f}")
    bad = [v for _, vs in results for v in vs]
    for v in bad:
        print("VIOLATION", v)
    return 1 if bad else 0


TABLE1_CASES = {"good": "none", "bad": "appendix-a"}


def table1_configs(base: ScenarioConfig) -> list[tuple[str, str, ScenarioConfig]]:
    """Good case is fault-free after GST, bad case the omission schedule."""
    out = []
    for variant in ("rorqual", "pull"):
        for case, adv in TABLE1_CASES.items():
            cfg = base.replace(
                backend=variant, adversary=make_adversary(adv, base.n, base.f),
                leader_wait=False, link_mode="fixed", keep_trace=False,
            )
            out.append((variant, case, cfg))
    return out


def table1_row(item) -> dict:
    variant, case, cfg = item
    res = run(cfg)
    lat = [x for x in metrics.payload_latencies(res).values() if x is not None]
    lat_all = [x for x in metrics.payload_latencies(res, "all").values() if x is not None]
    return {
        "variant": variant,
        "case": case,
        "n": cfg.n,
        "f": cfg.f,
        "latency_delta": f"{max(lat, default=0.0) / cfg.delta:.3f}",
        "latency_all_delta": f"{max(lat_all, default=0.0) / cfg.delta:.3f}",
        "bytes_per_vertex": f"{metrics.byte_report(res).per_vertex:.1f}",
        "vertices": len(res.recorder.dispersals),
    }


def cmd_table1(args) -> int:
    base = load_config(args.config, _overrides(args))
    rows = _map(table1_row, table1_configs(base), args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "table1.csv", rows)
    for r in rows:
        print(f"{r['variant']:8} {r['case']:5} latency {r['latency_delta']} delta "
              f"(all correct {r['latency_all_delta']}), {r['bytes_per_vertex']} B/vertex")
    return 0


def cmd_check(args) -> int:
    base = load_config(args.config, _overrides(args)).replace(keep_trace=False)
    cfgs = [base.replace(seed=base.seed + s) for s in range(args.seeds)]
    bad = 0
    for cfg, (_, violations) in zip(cfgs, _map(_run_row, cfgs, args.jobs)):
        for v in violations:
            print(f"seed {cfg.seed}: {v}")
        bad += bool(violations)
    print(f"{len(cfgs) - bad}/{len(cfgs)} runs clean")
    return 1 if bad else 0


def _ns(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", help="key = value scenario file")
    common.add_argument("--n", type=int)
    common.add_argument("--f", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--gst", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--backend", choices=("rorqual", "pull"))
    common.add_argument("--adversary")
    common.add_argument("--out", default="out")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rorqual", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one scenario; CSV, DAG edge lists and trace")
    sw = sub.add_parser("sweep", parents=[common], help="scenario over several n and seeds")
    sw.add_argument("--ns", type=_ns, default=[4, 7, 10, 13, 16])
    sw.add_argument("--seeds", type=int, default=1)
    sub.add_parser("table1", parents=[common], help="good and bad case for both backends")
    ck = sub.add_parser("check-invariants", parents=[common], help="invariant checks over seeds")
    ck.add_argument("--seeds", type=int, default=10)
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "table1": cmd_table1, "check-invariants": cmd_check}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
