"""Command-line entry point: ``simulate``, ``train``, ``monitor``, ``evaluate``.

Exit codes: 0 success, 2 configuration/validation error, 3 data or schema
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import jsonio, pipeline, simgen
from .config import load_config, partition_of, pipeline_config
from .errors import BlockwatchError, ConfigError, DataError, SchemaError

log = logging.getLogger("blockwatch")

RECORD_COLUMNS = ("t", "unit", "T2", "T2_lim", "W", "W_lim", "B", "B_lim", "PFI",
                  "PFI_lim", "w_t2", "w_cusum", "w_block", "alarm", "sustained_alarm")
REPORT_COLUMNS = ("case", "onset", "FDD", "FDD_step", "FDR", "FAR", "sustained")


def _f(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# simulate


def _fault_kinds(arg: str | None, default: list) -> list:
    if arg is None:
        return list(default)
    if arg == "all":
        return list(simgen.FAULT_KINDS)
    if arg == "none":
        return []
    kinds = [k.strip() for k in arg.split(",") if k.strip()]
    bad = [k for k in kinds if k not in simgen.FAULT_KINDS]
    if bad:
        raise ConfigError(f"simulate: unknown fault kinds {bad}")
    return kinds


def cmd_simulate(cfg: dict, kinds: list) -> list[Path]:
    sim = cfg["simulate"]
    T, onset = sim["T"], sim["onset"]
    if kinds and onset >= T:
        raise ConfigError(f"simulate: onset {onset} must be < T {T}")
    part = partition_of(cfg)
    spec = simgen.default_spec(sim["spec_seed"], coupling=sim["coupling"],
                               partition=part,
                               process_noise=sim["process_noise"],
                               measurement_noise=sim["measurement_noise"])
    if sim["targets"] is not None:
        targets = list(sim["targets"])
    else:
        blocks = dict(part.blocks)
        if sim["fault_block"] not in blocks:
            raise ConfigError(f"simulate: fault_block {sim['fault_block']!r} not in "
                              f"partition {sorted(blocks)}")
        targets = list(blocks[sim["fault_block"]])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    base = simgen.generate(spec, T, seed=seed)
    written = []
    meta = {"seed": seed, "spec_hash": spec.digest(), "fault": None, "onset": None}
    path = out / "in_control.csv"
    simgen.write_csv(base, path, meta)
    written.append(path)
    if kinds:
        ref = simgen.generate(spec, max(T, 10000), seed=seed + 1)
        sd = ref.values.std(axis=0)
        faulty_base = simgen.generate(spec, T, seed=seed + 2)
        for i, kind in enumerate(kinds):
            fault = simgen.FaultSpec(kind, targets, sim["magnitude"], onset, seed=seed + 3 + i)
            y = simgen.inject_fault(faulty_base, fault, sd)
            path = out / f"fault_{kind}.csv"
            simgen.write_csv(y, path, {"seed": seed, "spec_hash": spec.digest(),
                                       "fault": fault.to_dict(), "onset": onset})
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg: dict) -> pipeline.PlantArtifacts:
    path = cfg["data"]["in_control"]
    if not path:
        raise ConfigError("train: no in-control data path given (--data)")
    if not Path(path).exists():
        raise ConfigError(f"train: in-control data path does not exist: {path}")
    data = simgen.load_csv(path)
    art = pipeline.offline_learn(data, partition_of(cfg), pipeline_config(cfg))
    out = Path(cfg["out"]) / "artifacts"
    pipeline.save_artifacts(art, out)
    with (out / "training_history.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "epoch", "total", "mse", "ortho"])
        for b in art.blocks:
            for row in b.history.rows():
                w.writerow([b.block_id, row["epoch"], _f(row["total"]), _f(row["mse"]),
                            _f(row["ortho"])])
    return art


# ---------------------------------------------------------------------------
# monitor


def write_records(res: pipeline.MonitorResult, path: Path):
    cusum = res.W is not None
    cols = [c for c in RECORD_COLUMNS if cusum or c not in ("W", "W_lim", "w_cusum")]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(res)):
            for n, bid in enumerate(res.block_ids):
                row = {
                    "t": int(res.t[i]), "unit": bid, "T2": _f(res.T2[i, n]),
                    "T2_lim": _f(res.T2_lim[n]), "B": _f(res.B[i, n]),
                    "B_lim": _f(res.B_lim[n]), "PFI": _f(res.PFI[i]),
                    "PFI_lim": _f(res.PFI_lim), "w_t2": _f(res.metric_weights[i, n, 0]),
                    "w_block": _f(res.block_weights[i, n]),
                    "alarm": int(res.alarm[i]), "sustained_alarm": int(res.sustained[i]),
                }
                if cusum:
                    row.update(W=_f(res.W[i, n]), W_lim=_f(res.W_lim[n]),
                               w_cusum=_f(res.metric_weights[i, n, 1]))
                w.writerow([row[c] for c in cols])


def cmd_monitor(cfg: dict, artifacts: str | Path, data_path: str | Path,
                mode: str) -> tuple[Path, pipeline.MonitorResult, int | None]:
    art_dir = Path(artifacts)
    if not (art_dir / "manifest.json").exists():
        raise ConfigError(f"monitor: no artifacts found in {art_dir}")
    if not Path(data_path).exists():
        raise ConfigError(f"monitor: data path does not exist: {data_path}")
    art = pipeline.load_artifacts(art_dir, jobs=cfg["jobs"])
    stream = simgen.load_csv(data_path)
    res = pipeline.monitor(art, stream, mode)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"records_{Path(data_path).stem}.csv"
    write_records(res, path)
    jsonio.dump({"source": Path(data_path).name, "mode": mode,
                 "onset": stream.meta.get("onset"), "fault": stream.meta.get("fault"),
                 "sustain_m": art.config.sustain_m, "time_unit": "samples"},
                simgen.sidecar_path(path))
    return path, res, stream.meta.get("onset")


# ---------------------------------------------------------------------------
# evaluate


def read_records(path: str | Path) -> tuple[np.ndarray, np.ndarray, float]:
    """(t, PFI, PFI_lim) with one entry per sample."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"evaluate: records file does not exist: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in ("t", "PFI") if c not in cols]
        if missing:
            raise SchemaError(f"{path}: records lack columns {missing}")
        seen = {}
        lim = None
        for lineno, row in enumerate(reader, start=2):
            try:
                t = int(row["t"])
                seen.setdefault(t, float(row["PFI"]))
                if lim is None and row.get("PFI_lim") not in (None, ""):
                    lim = float(row["PFI_lim"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    t = np.array(sorted(seen), dtype=np.int64)
    return t, np.array([seen[k] for k in t]), lim


def cmd_evaluate(cfg: dict, records: list, onset: int | None) -> pipeline.EvalReport:
    entries = []
    alpha = cfg["fusion"]["alpha"] if cfg["fusion"]["threshold"] is None \
        else cfg["fusion"]["threshold"]
    for rpath in records:
        t, pfi, lim = read_records(rpath)
        side = simgen.sidecar_path(rpath)
        meta = jsonio.load(side) if side.exists() else {}
        case_onset = onset if onset is not None else meta.get("onset")
        m = meta.get("sustain_m", cfg["fusion"]["sustain_m"])
        thr = lim if lim is not None else alpha
        case = Path(rpath).stem.removeprefix("records_")
        entries.append(pipeline.evaluate(t, pfi, case_onset, m, thr, case))
    report = pipeline.EvalReport(tuple(entries), {"time_unit": "samples",
                                                  "none_detected": pipeline.NONE_DETECTED})
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for e in entries:
            w.writerow([e.case, "" if e.onset is None else e.onset,
                        _fmt_opt(e.FDD, e.onset is not None),
                        _fmt_opt(e.FDD_step, e.onset is not None),
                        "" if e.FDR is None else f"{e.FDR:.4f}",
                        "" if e.FAR is None else f"{e.FAR:.4f}",
                        "" if e.onset is None else str(e.sustained).lower()])
    jsonio.dump(report.to_dict(), out / "report.json")
    return report


def _fmt_opt(v, applicable: bool) -> str:
    if not applicable:
        return ""
    return pipeline.NONE_DETECTED if v is None else str(v)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blockwatch",
                                 description="Block-wise process monitoring.")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="global seed")
    ap.add_argument("--jobs", type=int, help="worker threads for per-block work")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write synthetic in-control and faulted CSVs")
    s.add_argument("--faults", help="'all', 'none' or a comma list of fault kinds")
    s.add_argument("--T", type=int, help="samples per stream")
    s.add_argument("--onset", type=int, help="fault onset sample")
    s.add_argument("--magnitude", type=float, help="fault size in in-control stdevs")
    s.add_argument("--fault-block", help="block whose variables the faults target")

    t = sub.add_parser("train", help="offline learning on in-control data")
    t.add_argument("--data", help="in-control CSV")
    t.add_argument("--ortho-weight", type=float, help="orthogonality loss weight")
    t.add_argument("--epochs", type=int)

    m = sub.add_parser("monitor", help="score a stream with trained artifacts")
    m.add_argument("--artifacts", required=True, help="artifacts directory")
    m.add_argument("--data", required=True, help="stream CSV")
    m.add_argument("--ablate", choices=pipeline.MODES, help="ablation mode")

    e = sub.add_parser("evaluate", help="FDD/FDR/FAR report from records")
    e.add_argument("--records", nargs="+", required=True, help="records CSV files")
    e.add_argument("--onset", type=int, help="fault onset (overrides metadata)")
    return ap


def _overrides(args) -> dict:
    o: dict = {}
    for key in ("seed", "jobs", "out"):
        if getattr(args, key) is not None:
            o[key] = getattr(args, key)
    sim = {k: getattr(args, a) for k, a in (("T", "T"), ("onset", "onset"),
                                           ("magnitude", "magnitude"),
                                           ("fault_block", "fault_block"))
           if getattr(args, a, None) is not None}
    if sim:
        o["simulate"] = sim
    if getattr(args, "data", None) is not None and args.command == "train":
        o["data"] = {"in_control": args.data}
    ol = {}
    if getattr(args, "ortho_weight", None) is not None:
        ol["ortho_weight"] = args.ortho_weight
    if getattr(args, "epochs", None) is not None:
        ol["epochs"] = args.epochs
    if ol:
        o["olae"] = ol
    if getattr(args, "ablate", None) is not None:
        o["ablation"] = args.ablate
    return o


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "simulate":
            paths = cmd_simulate(cfg, _fault_kinds(args.faults, cfg["simulate"]["faults"]))
            for p in paths:
                print(p)
        elif args.command == "train":
            art = cmd_train(cfg)
            if art.meta.get("baseline"):
                print("baseline=true (orthogonality weight 0)")
            for b in art.blocks:
                print(f"block {b.block_id}: T2_lim={b.t2.limit:.4g} h={b.h:.4g} "
                      f"B_lim={b.B_lim['full']:.4g}")
        elif args.command == "monitor":
            path, res, onset = cmd_monitor(cfg, args.artifacts, args.data,
                                           cfg["ablation"])
            pre = res.alarm if onset is None else res.alarm[res.t < onset]
            far = f"{pre.mean():.4f}" if pre.size else "n/a"
            print(f"{path}: {len(res)} records, FAR {far}")
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.records, args.onset)
            print((Path(cfg["out"]) / "report.csv").read_text(encoding="utf-8"), end="")
    except BlockwatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(run())
