"""Command-line entry point: ``pulsebell <subcommand> ...``.

Exit codes: 0 success, 1 analysis did not converge (or the orchestrated run
aborted), 2 input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bell import (MethodSummary, OutcomeCounts, chsh_from_counts, combine_summaries, compare_report,
                   counts_for_pairs, pair_keys, read_manifest)
from .orchestrator import Lab, RunScript, ScriptError, run_orchestrated
from .postselect import (CoincidenceSet, PostselectResult, PostselectSchedule, PostselectStage, default_schedule,
                         iterate_postselect)
from .pulsematch import (AmbiguousStepError, NumberingError, StepNotFoundError, intra_pulse_histogram,
                         pulse_match_streams)
from .sim import GroundTruth, RunConfig, SimulationError, read_ground_truth, write_ground_truth, write_tag_map
from .timetags import PlanError, TagFileError, TagStream, read_tag_file, write_tag_file

log = logging.getLogger("pulsebell")

EXIT_OK = 0
EXIT_NO_CONVERGENCE = 1
EXIT_INPUT = 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_HALF_RANGE_PS = 15_000_000_000


class InputError(Exception):
    pass


class AnalysisFailed(Exception):
    pass


class Outputs:
    """Output directory that refuses to overwrite unless forced."""

    def __init__(self, out_dir: str | None, force: bool):
        self.dir = Path(out_dir or ".")
        self.force = force

    def claim(self, *names: str) -> None:
        if self.force:
            return
        taken = [n for n in names if (self.dir / n).exists()]
        if taken:
            raise InputError(f"refusing to overwrite {', '.join(taken)} in {self.dir} (use --force)")

    def write(self, name: str, data: bytes | str) -> Path:
        self.claim(name)
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_bytes(data.encode() if isinstance(data, str) else data)
        log.info("wrote %s", path)
        return path


def _gnuplot(csv_name: str, xlabel: str, ylabel: str) -> str:
    return (
        "set datafile separator ','\n"
        f"set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"
        f"plot '{csv_name}' every ::1 using 1:2 with steps notitle\n"
    )


def _read_stream(path: str | Path) -> TagStream:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return read_tag_file(data)
    except TagFileError as exc:
        raise InputError(f"{path}: {exc}") from None


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _schedule(args) -> PostselectSchedule:
    ranged = any(v is not None for v in (args.d_min_ps, args.d_max_ps, args.d_step_ps))
    if args.tw_ps is not None:
        if args.schedule:
            raise InputError("--tw-ps and --schedule are mutually exclusive")
        lo = args.d_min_ps if args.d_min_ps is not None else -DEFAULT_HALF_RANGE_PS
        hi = args.d_max_ps if args.d_max_ps is not None else DEFAULT_HALF_RANGE_PS
        step = args.d_step_ps if args.d_step_ps is not None else max(1, args.tw_ps)
        if hi < lo:
            raise InputError("--d-max-ps is below --d-min-ps")
        try:
            return PostselectSchedule((PostselectStage(args.tw_ps, (hi - lo) // 2, step),), center_ps=(lo + hi) // 2)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if ranged:
        raise InputError("--d-min-ps/--d-max-ps/--d-step-ps need --tw-ps")
    if args.schedule:
        try:
            return PostselectSchedule.from_text(_read_text(args.schedule))
        except ValueError as exc:
            raise InputError(f"{args.schedule}: {exc}") from None
    return default_schedule()


def _stage_report(res: PostselectResult) -> str:
    lines = []
    for n, (h, p) in enumerate(zip(res.histograms, res.peaks)):
        if p is None:
            lines.append(f"stage {n}: t_w_ps={h.t_w_ps} no peak")
        else:
            lines.append(f"stage {n}: t_w_ps={h.t_w_ps} d_peak_ps={p.d_peak_ps} n_c={p.count} "
                         f"width_ps={p.width_ps} prominence={p.prominence:.2f} secondary={len(p.secondary_peaks)}")
    lines.append(f"converged={str(res.converged).lower()}")
    if not res.converged:
        lines.append(f"failed_stage={res.failed_stage} reason={res.reason}")
    if res.pairs is not None:
        lines.append(f"pairs={len(res.pairs)} d_ps={res.d_final_ps} t_w_ps={res.t_w_final_ps}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ subcommands

def cmd_simulate(args) -> int:
    cfg = RunConfig.from_text(_read_text(args.config)) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    runs = cfg.chsh_runs() if cfg.chsh_set else [cfg]
    out = Outputs(args.out, args.force)
    names = [f"{r.run_id}{s}" for r in runs for s in ("_A.tags", "_B.tags", "_truth.csv", "_tagmap.csv")]
    out.claim(*names, *(["manifest.csv"] if cfg.chsh_set else []))
    rows = ["alpha_deg,beta_deg,file_a,file_b"]
    for r in runs:
        sim = r.simulate()
        out.write(f"{r.run_id}_A.tags", write_tag_file(sim.a))
        out.write(f"{r.run_id}_B.tags", write_tag_file(sim.b))
        out.write(f"{r.run_id}_truth.csv", write_ground_truth(sim.truth))
        out.write(f"{r.run_id}_tagmap.csv", write_tag_map(sim.truth))
        rows.append(f"{r.alpha_deg:g},{r.beta_deg:g},{r.run_id}_A.tags,{r.run_id}_B.tags")
        print(f"{r.run_id}: tags A={len(sim.a)} B={len(sim.b)} detected pairs={len(sim.truth.detected_pairs())}")
    if cfg.chsh_set:
        out.write("manifest.csv", "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_postselect(args) -> int:
    schedule = _schedule(args)
    a, b = _read_stream(args.file_a), _read_stream(args.file_b)
    out = Outputs(args.out, args.force)
    ta, _ = a.detections()
    tb, _ = b.detections()
    res = iterate_postselect(ta, tb, schedule)
    for n, h in enumerate(res.histograms):
        out.write(f"postselect_hist_{n}.csv", h.to_csv())
        out.write(f"postselect_hist_{n}.gp", _gnuplot(f"postselect_hist_{n}.csv", "delay d (ps)", "N_c"))
    if res.pairs is not None:
        out.write("postselect_pairs.csv", res.pairs.to_csv())
    report = _stage_report(res)
    out.write("postselect_report.txt", report)
    sys.stdout.write(report)
    if not res.converged:
        sys.stderr.write(f"post-selection did not converge at stage {res.failed_stage}: {res.reason}\n")
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _pulse_match(a: TagStream, b: TagStream, tw: int | None):
    try:
        return pulse_match_streams(a, b, tw)
    except (StepNotFoundError, AmbiguousStepError, NumberingError) as exc:
        raise AnalysisFailed(str(exc)) from None
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_pulsematch(args) -> int:
    a, b = _read_stream(args.file_a), _read_stream(args.file_b)
    res = _pulse_match(a, b, args.tw_ps)
    out = Outputs(args.out, args.force)
    out.claim("step_A.txt", "step_B.txt", "start_offset.txt", "pulsematch_pairs.csv", "intra_pulse_hist.csv")
    out.write("step_A.txt", res.step_a.to_text())
    out.write("step_B.txt", res.step_b.to_text())
    off = res.offset
    offset_text = (
        f"pulse_count_difference={off.pulse_count_difference}\n"
        f"nominal_offset_ps={off.nominal_offset_ps}\n"
        f"nominal_offset_ms={off.nominal_offset_ps / 1e9:.6f}\n"
        f"measured_offset_ps={off.measured_offset_ps}\n"
        f"measured_offset_ms={off.measured_offset_ps / 1e9:.6f}\n"
    )
    out.write("start_offset.txt", offset_text)
    out.write("pulsematch_pairs.csv", res.pairs.to_csv())
    hist = intra_pulse_histogram(res.pairs)
    out.write("intra_pulse_hist.csv", hist.to_csv())
    out.write("intra_pulse_hist.gp", _gnuplot("intra_pulse_hist.csv", "t_A - t_B within pulse (ps)", "pairs"))
    sys.stdout.write(offset_text)
    print(f"pairs={len(res.pairs)} multi_a={res.pairs.params['multi_a']} multi_b={res.pairs.params['multi_b']} "
          f"recovered_a={len(res.numbering_a.recovered)} recovered_b={len(res.numbering_b.recovered)}")
    return EXIT_OK


def _truth_for(file_a: Path) -> GroundTruth | None:
    stem = file_a.name.removesuffix("_A.tags")
    truth, tagmap = file_a.with_name(f"{stem}_truth.csv"), file_a.with_name(f"{stem}_tagmap.csv")
    if file_a.name.endswith("_A.tags") and truth.exists() and tagmap.exists():
        return read_ground_truth(truth.read_bytes(), tagmap.read_bytes())
    return None


def _run_method(method: str, a: TagStream, b: TagStream, tw_ps: int | None,
                schedule: PostselectSchedule) -> tuple[CoincidenceSet, bool]:
    if method == "pulsematch":
        return _pulse_match(a, b, tw_ps).pairs, True
    ta, _ = a.detections()
    tb, _ = b.detections()
    res = iterate_postselect(ta, tb, schedule)
    if res.pairs is None:
        raise AnalysisFailed(f"post-selection found no peak: {res.reason}")
    if not res.converged:
        log.warning("post-selection stopped at stage %d (%s); using t_w=%d ps", res.failed_stage, res.reason,
                    res.t_w_final_ps)
    return res.pairs, res.converged


def cmd_chsh(args) -> int:
    if not args.manifest:
        raise InputError("chsh needs --manifest")
    entries = _manifest(args.manifest)
    out = Outputs(args.out, args.force)
    out.claim(f"chsh_{args.method}.txt", f"chsh_{args.method}.csv")
    counts: list[OutcomeCounts] = []
    converged = True
    schedule = _schedule(args) if args.method == "postselect" else default_schedule()
    for e in entries:
        a, b = _read_stream(e.file_a), _read_stream(e.file_b)
        pairs, ok = _run_method(args.method, a, b, args.tw_ps, schedule)
        converged &= ok
        _, oa = a.detections()
        _, ob = b.detections()
        counts.append(counts_for_pairs(pairs, oa, ob, e.setting))
    result = _chsh(counts, args.method)
    text = result.to_text()
    if not converged:
        text += "# post-selection did not converge for every run; pairs from the last converged stage\n"
    out.write(f"chsh_{args.method}.txt", text)
    out.write(f"chsh_{args.method}.csv", result.to_csv())
    sys.stdout.write(text)
    return EXIT_OK


def _manifest(path: str):
    try:
        return read_manifest(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _chsh(counts, method):
    try:
        return chsh_from_counts(counts, method)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _true_pairs(pairs: CoincidenceSet, truth: GroundTruth) -> int:
    ea = truth.tag_event["A"][pairs.index_a]
    eb = truth.tag_event["B"][pairs.index_b]
    return int(np.count_nonzero(ea == eb))


def cmd_report(args) -> int:
    if args.manifest:
        runs = [(e.file_a, e.file_b, e.setting) for e in _manifest(args.manifest)]
    elif len(args.files) == 2:
        runs = [(Path(args.files[0]), Path(args.files[1]), None)]
    else:
        raise InputError("report needs two tag files or --manifest")
    if any(v is not None for v in (args.d_min_ps, args.d_max_ps, args.d_step_ps)):
        raise InputError("report scans with --schedule (or the default); --tw-ps sets the pulse-match window")
    schedule = PostselectSchedule.from_text(_read_text(args.schedule)) if args.schedule else default_schedule()
    out = Outputs(args.out, args.force)
    out.claim("report.txt", "report.csv")
    per_method: dict[str, list] = {"postselect": [], "pulsematch": []}
    true_found = {"postselect": 0, "pulsematch": 0}
    truth_total: int | None = 0
    for k, (fa, fb, setting) in enumerate(runs):
        a, b = _read_stream(fa), _read_stream(fb)
        _, oa = a.detections()
        _, ob = b.detections()
        truth = _truth_for(Path(fa))
        if truth is None or truth_total is None:
            truth_total = None
        else:
            truth_total += len(truth.detected_pairs())
        for method in per_method:
            pairs, _ok = _run_method(method, a, b, args.tw_ps, schedule)
            c = counts_for_pairs(pairs, oa, ob, setting) if setting is not None else None
            per_method[method].append((f"run{k}", pairs, c))
            if truth is not None:
                true_found[method] += _true_pairs(pairs, truth)
    summaries = {}
    for method, rows in per_method.items():
        tp = true_found[method] if truth_total is not None else None
        if args.manifest:
            summaries[method] = combine_summaries(method, _check_counts(rows), tp)
        else:
            keys = frozenset().union(*(pair_keys(r, p) for r, p, _ in rows))
            summaries[method] = MethodSummary(method, keys, None, tp)
    rep = compare_report(summaries["postselect"], summaries["pulsematch"], truth_total)
    out.write("report.txt", rep.to_text())
    out.write("report.csv", rep.to_csv())
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def _check_counts(rows):
    try:
        chsh_from_counts([c for _, _, c in rows])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return rows


def _orchestrate_config(text: str) -> tuple[RunScript, RunConfig]:
    script_keys = {f.name for f in fields(RunScript)}
    physics_keys = {f.name for f in fields(RunConfig)}
    script_lines, physics_lines = [], []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key = line.partition("=")[0].strip()
        if key in script_keys:
            script_lines.append(line)
        elif key in physics_keys:
            physics_lines.append(line)
        else:
            raise InputError(f"config line {n}: unknown key {key!r}")
    return RunScript.from_text("\n".join(script_lines)), RunConfig.from_text("\n".join(physics_lines))


FAULTS = ("drop_ready", "bad_saved_run_id")


def _faults(specs: Sequence[str] | None) -> dict[str, frozenset[str]]:
    out: dict[str, set[str]] = {}
    for spec in specs or ():
        station, _, name = spec.partition(":")
        if station not in ("A", "B") or name not in FAULTS:
            raise InputError(f"--fault expects A|B:{'|'.join(FAULTS)}, got {spec!r}")
        out.setdefault(station, set()).add(name)
    return {k: frozenset(v) for k, v in out.items()}


def cmd_orchestrate(args) -> int:
    script, physics = _orchestrate_config(_read_text(args.config)) if args.config else (RunScript(), RunConfig())
    seed = physics.seed if args.seed is None else args.seed
    out = Outputs(args.out, args.force)
    rid = script.run_id
    out.claim(f"{rid}_A.tags", f"{rid}_B.tags", f"{rid}_truth.csv", f"{rid}_tagmap.csv", f"{rid}_outcome.txt")
    lab = Lab(script.plan, script.setting, physics.source, physics.clocks, out.dir, seed, physics.trigger_loss)
    outcome = run_orchestrated(script, lab, args.transport, args.listen or "127.0.0.1:0", seed, _faults(args.fault))
    if outcome.truth is not None:
        out.write(f"{rid}_truth.csv", write_ground_truth(outcome.truth))
        out.write(f"{rid}_tagmap.csv", write_tag_map(outcome.truth))
    out.write(f"{rid}_outcome.txt", outcome.to_text())
    sys.stdout.write(outcome.to_text())
    if not outcome.ok:
        sys.stderr.write(f"run aborted: {outcome.reason}\n")
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


# ------------------------------------------------------------ parser

def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulsebell", description="Pulse-numbered coincidence analysis for remote stations.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, scan=False, tw=False):
        sp.add_argument("--out", help="output directory (default: current directory)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if tw or scan:
            sp.add_argument("--tw-ps", type=int, help="coincidence window in ps")
        if scan:
            sp.add_argument("--d-min-ps", type=int)
            sp.add_argument("--d-max-ps", type=int)
            sp.add_argument("--d-step-ps", type=int)
            sp.add_argument("--schedule", help="post-selection schedule file")

    sp = sub.add_parser("simulate", help="simulate a run (or four CHSH runs) to tag files")
    sp.add_argument("--config", help="key=value run configuration")
    sp.add_argument("--seed", type=_u64)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("postselect", help="delay-scan post-selection")
    sp.add_argument("file_a")
    sp.add_argument("file_b")
    common(sp, scan=True)
    sp.set_defaults(func=cmd_postselect)

    sp = sub.add_parser("pulsematch", help="pulse-number matching")
    sp.add_argument("file_a")
    sp.add_argument("file_b")
    common(sp, tw=True)
    sp.set_defaults(func=cmd_pulsematch)

    sp = sub.add_parser("chsh", help="CHSH statistic over a manifest of runs")
    sp.add_argument("method", nargs="?", choices=("pulsematch", "postselect"), default="pulsematch")
    sp.add_argument("--manifest")
    common(sp, scan=True)
    sp.set_defaults(func=cmd_chsh)

    sp = sub.add_parser("report", help="compare post-selection with pulse matching")
    sp.add_argument("files", nargs="*")
    sp.add_argument("--manifest")
    common(sp, scan=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("orchestrate", help="run the control protocol end to end")
    sp.add_argument("--config", help="key=value run script and lab parameters")
    sp.add_argument("--seed", type=_u64)
    sp.add_argument("--transport", choices=("inproc", "socket"), default="inproc")
    sp.add_argument("--listen", help="host:port for the coordinator (socket transport)")
    sp.add_argument("--fault", action="append", metavar="STATION:NAME",
                    help="inject a station fault for protocol testing (drop_ready, bad_saved_run_id)")
    common(sp)
    sp.set_defaults(func=cmd_orchestrate)
    return p


def _configure_logging() -> None:
    level = os.environ.get("PULSEBELL_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def run_cli(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AnalysisFailed as exc:
        sys.stderr.write(f"analysis failed: {exc}\n")
        return EXIT_NO_CONVERGENCE
    except (InputError, SimulationError, ScriptError, PlanError, TagFileError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
