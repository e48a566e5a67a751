"""`forge` command line: synth / corrupt / instruct / parse / refine / eval / serve.

All subcommands emit JSON on stdout; diagnostics go to stderr. Exit codes:
0 ok, 1 usage, 2 data error, 3 internal failure. Options may also be given
through a key=value config file (flags take precedence).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import VesselForgeError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config_file(path: str) -> dict[str, str]:
    """Flat key=value overlay; '#' starts a comment, quotes are stripped."""
    out: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key.replace("_", "-")] = val.strip("\"'")
    return out


def _overlay_config(argv: list[str]) -> list[str]:
    """Insert config-file values as flags after the subcommand, unless the
    same flag was given explicitly (explicit flags win)."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ValueError("--config needs a path")
    cfg = _load_config_file(argv[i + 1])
    argv = argv[:i] + argv[i + 2:]
    extra: list[str] = []
    for key, val in cfg.items():
        flag = f"--{key}"
        if flag in argv:
            continue
        if val.lower() in ("true", "false"):
            if val.lower() == "true":
                extra.append(flag)
        else:
            extra.extend([flag, val])
    # subcommand stays first so argparse still dispatches correctly
    return argv[:1] + extra + argv[1:]


def _load_centerline_file(path, radius_source=None):
    from .service import _load_centerlines

    return _load_centerlines(Path(path).read_text(),
                             radius_source=radius_source)


# ---------------------------------------------------------------------------
# subcommands

def _discover_subjects(subjects_dir: Path):
    """A subject is a `<id>_centerlines.json` plus a `<id>_gt` volume
    (rawl pair or NIfTI) in the same directory."""
    from .volume import load_volume

    subjects = []
    for cl_path in sorted(subjects_dir.glob("*_centerlines.json")):
        sid = cl_path.name[: -len("_centerlines.json")]
        vol = None
        for cand in (f"{sid}_gt.rawl.json", f"{sid}_gt.nii.gz", f"{sid}_gt.nii"):
            if (subjects_dir / cand).exists():
                vol = load_volume(subjects_dir / cand)
                break
        if vol is None:
            raise VesselForgeError(f"no gt volume found for subject {sid}")
        refs = _load_centerline_file(cl_path, radius_source=vol)
        subjects.append((sid, vol, refs))
    if not subjects:
        raise VesselForgeError(f"no subjects under {subjects_dir}")
    return subjects


def _synth_one(args_tuple):
    # module-level so ProcessPoolExecutor can pickle it
    subjects_dir, sid, out_dir, cfg_dict, seed, first_index, paraphrase_mode = args_tuple
    from .corruption import CorruptionConfig, synthesize_dataset

    subjects = [s for s in _discover_subjects(Path(subjects_dir)) if s[0] == sid]
    cfg = CorruptionConfig(**cfg_dict)
    pcfg = _paraphrase_cfg(paraphrase_mode)
    manifest = synthesize_dataset(subjects, cfg, out_dir, seed=seed,
                                  first_index=first_index,
                                  write_manifest=False, paraphrase_cfg=pcfg)
    return [m.to_json() for m in manifest]


def _paraphrase_cfg(mode: str):
    from .llm_bridge import BridgeConfig

    if mode == "off":
        return None
    return BridgeConfig.from_env(mode)


def cmd_synth(args) -> int:
    from .corruption import CorruptionConfig, synthesize_dataset

    seed = args.seed if args.seed is not None else 0
    _note(f"seed: {seed}")
    subjects = _discover_subjects(Path(args.subjects))
    cfg_dict = dict(variants_per_subject=args.variants, drop_p=args.drop_p)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1 and len(subjects) > 1:
        work = [(args.subjects, sid, str(out_dir), cfg_dict, seed, i,
                 args.paraphrase)
                for i, (sid, _, _) in enumerate(subjects)]
        lines: list[str] = []
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for chunk in pool.map(_synth_one, work):
                lines.extend(chunk)
        (out_dir / "manifest.jsonl").write_text("".join(x + "\n" for x in lines))
        n = len(lines)
    else:
        manifest = synthesize_dataset(
            subjects, CorruptionConfig(**cfg_dict), out_dir, seed=seed,
            paraphrase_cfg=_paraphrase_cfg(args.paraphrase))
        n = len(manifest)
    _emit({"seed": seed, "subjects": len(subjects), "variants": n,
           "manifest": str(out_dir / "manifest.jsonl")})
    return EXIT_OK


def cmd_corrupt(args) -> int:
    from .corruption import EditRecord, apply_error
    from .volume import load_volume, save_volume

    vol = load_volume(args.gt)
    record = EditRecord.from_dict(json.loads(args.record))
    refs = _load_centerline_file(args.centerlines, radius_source=vol)
    if record.segment_id not in refs:
        raise VesselForgeError(
            f"no centerline for segment {record.segment_id}")
    _note(f"seed: {record.seed}")
    out = apply_error(vol, refs[record.segment_id], record)
    save_volume(out, args.out)
    _emit({"seed": record.seed, "out": str(args.out),
           "hash": out.content_hash(),
           "changed_voxels": int((out.labels != vol.labels).sum())})
    return EXIT_OK


def cmd_instruct(args) -> int:
    from .corruption import EditRecord
    from .instruction import render_instruction

    record = EditRecord.from_dict(json.loads(args.record))
    _note(f"seed: {record.seed}")
    doc = render_instruction(record, args.granularity)
    out = doc.to_dict()
    out["text"] = doc.concise if args.granularity == "concise" else doc.detailed
    _emit(out)
    return EXIT_OK


def cmd_parse(args) -> int:
    from .instruction import command_to_dict, parse_instruction

    _note("seed: 0")
    result = parse_instruction(args.text)
    out = {
        "commands": [command_to_dict(c) for c in result.commands],
        "errors": [{"clause_index": e.clause_index, "start": e.start,
                    "end": e.end, "message": e.message}
                   for e in result.errors],
    }
    _emit(out)
    if result.errors and not result.commands:
        return EXIT_DATA
    return EXIT_OK


def cmd_refine(args) -> int:
    from .corruption import partition_instructions
    from .refine import RefinementSession, refine_step
    from .volume import load_volume, save_volume

    vol = load_volume(getattr(args, "in"))
    gt = load_volume(args.gt) if args.gt else None
    refs = {}
    if args.centerlines:
        refs = _load_centerline_file(args.centerlines,
                                     radius_source=gt if gt is not None else vol)
    lines = [ln.strip() for ln in Path(args.instructions).read_text().splitlines()
             if ln.strip()]
    _note("seed: 0")
    session = RefinementSession(vol, gt=gt, reference_centerlines=refs)
    steps = []
    if args.k_partitions > 1:
        batches = [" ".join(part) for part in
                   partition_instructions(lines, args.k_partitions) if part]
    else:
        batches = lines
    for text in batches:
        entry = refine_step(session, text, compute_metrics=False)
        steps.append({"instruction": text, "hash": entry["hash"],
                      "changed_voxels": entry["changed_voxels"],
                      "outcomes": entry["outcomes"]})
    save_volume(session.current, args.out)
    out = {"seed": 0, "out": str(args.out),
           "hash": session.current.content_hash(), "steps": steps}
    if gt is not None:
        from .metrics import evaluate

        out["metrics"] = evaluate(session.current, gt).to_dict()
    _emit(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .volume import load_volume

    pred = load_volume(args.pred)
    gt = load_volume(args.gt)
    _note("seed: 0")
    error_context = None
    if args.group_by_kind:
        error_context = _kind_context(Path(args.group_by_kind),
                                      Path(args.pred), gt)
    report = evaluate(pred, gt, tau_mm=args.tau_mm,
                      error_context=error_context)
    _emit(report.to_dict())
    return EXIT_OK


def _kind_context(manifest_path: Path, pred_path: Path, gt):
    """Per-kind grouping context from a synthesis manifest: the baseline
    Dice of each corrupted segment, measured against the same GT."""
    from .corruption import SampleTuple
    from .metrics import dice
    from .volume import load_volume

    samples = [SampleTuple.from_json(ln)
               for ln in manifest_path.read_text().splitlines() if ln.strip()]
    stem = pred_path.name.split(".")[0]
    chosen = next((s for s in samples if Path(s.error_path).name == stem),
                  None) or samples[0]
    err_vol = load_volume(manifest_path.parent / chosen.error_path)
    context = []
    for entry in chosen.records:
        if entry.get("dropped") or "error" in entry:
            continue
        rec = entry["record"]
        cid = int(rec["segment_id"])
        base = dice(err_vol.class_mask(cid), gt.class_mask(cid))
        context.append((rec["kind"], cid, base))
    return context


def cmd_serve(args) -> int:
    from .service import serve

    _note("seed: 0")
    serve(args.addr, snapshot_dir=args.snapshot)
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forge", description=__doc__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    s = sub.add_parser("synth", help="synthesize corrupted dataset variants")
    s.add_argument("--subjects", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variants", type=int, default=15)
    s.add_argument("--drop-p", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--paraphrase", choices=["mock", "live", "off"],
                   default="off")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("corrupt", help="apply one error record to a volume")
    s.add_argument("--gt", required=True)
    s.add_argument("--centerlines", required=True)
    s.add_argument("--record", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("instruct", help="render an instruction document")
    s.add_argument("--record", required=True)
    s.add_argument("--granularity", choices=["concise", "detailed"],
                   default="detailed")
    s.set_defaults(func=cmd_instruct)

    s = sub.add_parser("parse", help="parse instruction text to commands")
    s.add_argument("--text", required=True)
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("refine", help="apply an instruction file to a volume")
    s.add_argument("--in", required=True)
    s.add_argument("--instructions", required=True)
    s.add_argument("--k-partitions", type=int, default=1)
    s.add_argument("--gt", default=None)
    s.add_argument("--centerlines", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval", help="score a prediction against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--tau-mm", type=float, default=1.0)
    s.add_argument("--group-by-kind", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="run the refinement session HTTP service")
    s.add_argument("--addr", default="127.0.0.1:8077")
    s.add_argument("--snapshot", default=None)
    s.set_defaults(func=cmd_serve)
    return p


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _overlay_config(argv)
    except (OSError, ValueError) as e:
        _note(f"usage error: {e}")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (VesselForgeError, OSError, json.JSONDecodeError, KeyError,
            ValueError) as e:
        _note(f"data error: {e}")
        return EXIT_DATA
    except KeyboardInterrupt:
        raise
    except Exception as e:  # anything else is a bug, not bad data
        _note(f"internal error: {type(e).__name__}: {e}")
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
