"""Command-line runner: coverage checks, bound tables, training, witnesses, 4D decomposition.

Every CSV starts with ``#`` manifest lines (command, arguments, seed, git
revision, outputs, timestamp). Two runs with the same arguments produce the
same file apart from the ``# timestamp:`` line; ``strip_volatile`` removes it.

CSV columns
  verify-analytic  ensemble,branch,samples,region_fraction,max_residual
  bounds           group,order,closed_form_deg,certified_deg,conjectured,u_w,u_x,u_y,u_z
  train            level,error_deg,log10_error_deg
"""
from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from .ensembles import analytic_ensemble_batch
from .errors import InvalidInputError, NotARotationError, TrainingDiverged
from .euler import EulerOrder, decode_branch, euler_branch, euler_select, euler_to_rot
from .nn.checkpoint import load_model, save_model
from .nn.heads import HeadKind
from .nn.train import PenaltySchedule, TrainConfig, make_task, train
from .nn.witness import common_zero_witness, symmetric_witness, witness_single
from .so3 import dist_rot, make_rng, quat_to_rot, sample_uniform_rot, witness_search
from .so4 import decompose_rot4, rotation_angles4
from .symmetry import GroupKind, bound_for_group, build_group, certify_bound, parse_group

RESIDUAL_TOL = 1e-7
EXIT_VIOLATION = 1
EXIT_NO_WITNESS = 3


# --------------------------------------------------------------------------
# manifest and CSV helpers


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
            cwd=Path(__file__).resolve().parent, timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def manifest_lines(command: str, args: dict, seed, outputs) -> list[str]:
    lines = [f"# command: {command}"]
    lines += [f"# {k}: {v}" for k, v in sorted(args.items())]
    lines += [f"# seed: {seed}", f"# git: {git_describe()}", f"# outputs: {', '.join(map(str, outputs))}"]
    lines.append(f"# timestamp: {datetime.datetime.now(datetime.timezone.utc).isoformat()}")
    return lines


def strip_volatile(text: str) -> str:
    """Drop the timestamp manifest line so outputs can be compared byte for byte."""
    return "".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("# timestamp:"))


def write_csv(path, manifest, header, rows):
    buf = io.StringIO()
    for line in manifest:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def _fmt(x) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# verify-analytic


def euler_grid(k: int = 50):
    """``k^3`` x-y-z Euler boxes, endpoints included so gimbal lock is hit exactly."""
    a = np.linspace(-np.pi, np.pi, k)
    b = np.linspace(-np.pi / 2, np.pi / 2, k)
    A, B, C = np.meshgrid(a, b, a, indexing="ij")
    return euler_to_rot(np.stack([A, B, C], axis=-1).reshape(-1, 3), EulerOrder.XYZ)


def gimbal_inputs(rng, n: int):
    """``R_xyz(alpha, +-pi/2, gamma)`` with random outer angles."""
    ang = rng.uniform(-np.pi, np.pi, (n, 3))
    ang[:, 1] = np.where(np.arange(n) % 2 == 0, np.pi / 2, -np.pi / 2)
    return euler_to_rot(ang, EulerOrder.XYZ)


def coverage_sweep(samples: int, seed: int, chunk: int = 100_000):
    """Per-branch region occupancy and residuals of both analytic ensembles.

    Returns rows ``(ensemble, branch, samples, region_fraction, max_residual)``.
    Branch ``selected`` is the residual of the branch each ensemble picks.
    """
    rng = make_rng(seed)
    batches = [euler_grid(), gimbal_inputs(rng, 10_000)]
    for start in range(0, samples, chunk):
        batches.append(quat_to_rot(sample_uniform_rot(rng, min(chunk, samples - start)), check=False))
    total = sum(len(b) for b in batches)
    stats = {(e, i): [0, 0.0] for e in ("quat", "euler") for i in (1, 2, 3, 4, "selected")}
    for R in batches:
        sel, _, region, errs = analytic_ensemble_batch(R)
        for i in range(4):
            s = stats["quat", i + 1]
            s[0] += int(region[:, i].sum())
            s[1] = max(s[1], float(errs[region[:, i], i].max(initial=0.0)))
        stats["quat", "selected"][1] = max(stats["quat", "selected"][1], float(errs[np.arange(len(R)), sel - 1].max()))
        stats["quat", "selected"][0] += len(R)
        idx, angles = euler_select(R)
        for i in range(1, 5):
            ang, weight = euler_branch(i, R)
            full = weight == 1.0
            s = stats["euler", i]
            s[0] += int(full.sum())
            if np.any(full):
                s[1] = max(s[1], float(dist_rot(R[full], decode_branch(i, ang[full])).max()))
        picked = np.empty(len(R))
        for i in range(1, 5):
            m = idx == i
            if np.any(m):
                picked[m] = dist_rot(R[m], decode_branch(i, angles[m]))
        stats["euler", "selected"][1] = max(stats["euler", "selected"][1], float(picked.max()))
        stats["euler", "selected"][0] += len(R)
    return [(e, i, total, s[0] / total, s[1]) for (e, i), s in stats.items()]


def cmd_verify_analytic(args) -> int:
    rows = coverage_sweep(args.samples, args.seed)
    manifest = manifest_lines("verify-analytic", {"samples": args.samples}, args.seed, [args.out])
    write_csv(args.out, manifest, ["ensemble", "branch", "samples", "region_fraction", "max_residual"],
              [(e, i, n, _fmt(f), _fmt(r)) for e, i, n, f, r in rows])
    worst = max(r for *_, r in rows)
    ok = worst <= RESIDUAL_TOL
    print(f"max residual {worst:.3e}: {'ok' if ok else 'VIOLATION'}", file=sys.stderr)
    return 0 if ok else EXIT_VIOLATION


# --------------------------------------------------------------------------
# bounds


def bound_groups():
    groups = [build_group("C", n) for n in range(2, 7)]
    groups += [build_group("D", n) for n in range(2, 7)]
    return groups + [build_group(k) for k in ("T", "O", "I")]


def bound_rows(groups):
    rows = []
    for G in groups:
        closed = bound_for_group(G)
        u, achieved = certify_bound(G)
        rows.append((G.name, G.order, _fmt(np.degrees(closed.value)), _fmt(np.degrees(achieved)),
                     int(closed.conjectured), *(_fmt(c) for c in u)))
    return rows


def cmd_bounds(args) -> int:
    groups = [parse_group(args.group)] if args.group else bound_groups()
    manifest = manifest_lines("bounds", {"group": args.group or "all"}, "-", [args.out])
    rows = bound_rows(groups)
    write_csv(args.out, manifest,
              ["group", "order", "closed_form_deg", "certified_deg", "conjectured", "u_w", "u_x", "u_y", "u_z"], rows)
    bad = [r[0] for r in rows if abs(float(r[2]) - float(r[3])) > np.degrees(1e-9)]
    if bad:
        print(f"certified bound differs from the closed form for {', '.join(bad)}", file=sys.stderr)
        return EXIT_VIOLATION
    return 0


# --------------------------------------------------------------------------
# train


def config_from_args(args) -> TrainConfig:
    symmetric = True
    if args.group:
        G = parse_group(args.group)
        if args.task != "pointcloud":
            raise InvalidInputError("--group selects the point-cloud symmetry and needs --task pointcloud")
        if (G.kind, G.n) == (GroupKind.D, 2):
            symmetric = True
        elif (G.kind, G.n) == (GroupKind.C, 1):
            symmetric = False
        else:
            raise InvalidInputError("point-cloud tasks support --group d2 (symmetric) or c1 (no symmetry)")
    batch = args.batch if args.batch is not None else (8 if args.task == "pointcloud" else 256)
    hidden = tuple(args.hidden) if args.hidden else {"mat3": (64,) * 3, "mat4": (128,) * 4, "pointcloud": (128, 128)}[args.task]
    return TrainConfig(
        task=args.task, rep=args.rep, heads=args.heads, hidden=hidden, iters=args.iters, batch=batch,
        lr=args.lr, lr_final=args.lr_final, seed=args.seed,
        penalty=PenaltySchedule.parse(args.penalty_schedule), hard_mining=args.hard_mining,
        supervision=args.supervision, region_iters=args.region_iters, symmetric=symmetric,
        noise_start=args.noise[0], noise_end=args.noise[1], noise_sigma=args.noise_sigma,
        eval_samples=args.samples,
    ).validate()


def witness_for(model, task, config: TrainConfig, rng):
    """Largest error certified by a witness search, or ``None`` when none applies."""
    quat_heads = all(h is HeadKind.QUAT for h in model.heads)
    if task.group is not None and model.n == 1:
        return symmetric_witness(model, task, task.group, rng).error
    if quat_heads and model.n == 1 and config.task != "mat4":
        w = witness_single(model, task)
        return w.error if w.found else None
    if quat_heads and model.n <= 3 and config.task != "mat4":
        return common_zero_witness(model, task, rng).error
    return None


def cmd_train(args) -> int:
    config = config_from_args(args)

    def progress(it, loss):
        print(f"iter {it} loss {loss:.6f}", file=sys.stderr)

    try:
        result = train(config, log_every=max(config.iters // 20, 1), progress=progress)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    s = result.summary
    ckpt = args.checkpoint or (Path(args.out).with_suffix(".rens") if args.out not in (None, "-") else None)
    if ckpt is not None:
        save_model(ckpt, result.model, config.to_json())
    max_err = s.max
    witness = None
    if args.witness:
        witness = witness_for(result.model, make_task(config), config, make_rng(config.seed + 1))
        if witness is not None:
            max_err = max(max_err, witness)
    manifest = manifest_lines("train", config.to_dict(), config.seed, [args.out, ckpt])
    manifest += [f"# mean_deg: {_fmt(np.degrees(s.mean))}", f"# max_deg: {_fmt(np.degrees(max_err))}",
                 f"# sample_max_deg: {_fmt(np.degrees(s.max))}"]
    if witness is not None:
        manifest.append(f"# witness_deg: {_fmt(np.degrees(witness))}")
    deg = np.degrees(s.quantiles)
    rows = [(_fmt(lv), _fmt(e), _fmt(np.log10(max(e, 1e-300)))) for lv, e in zip(s.levels, deg)]
    write_csv(args.out, manifest, ["level", "error_deg", "log10_error_deg"], rows)
    print(f"mean {np.degrees(s.mean):.4f} deg, max {np.degrees(max_err):.4f} deg", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# witness


def cmd_witness(args) -> int:
    if args.analytic:
        def f(R):
            sel, outs, _, _ = analytic_ensemble_batch(R)
            return outs[np.arange(len(R)), sel - 1]

        w = witness_search(f)
    else:
        model, config_json = load_model(args.checkpoint)
        config = TrainConfig.from_dict(json.loads(config_json)) if config_json else TrainConfig()
        task = make_task(config)
        if model.n == 1 and model.heads[0] is HeadKind.QUAT and task.group is None and config.task != "mat4":
            w = witness_single(model, task)
        else:
            rng = make_rng(args.seed)
            if task.group is not None and model.n == 1:
                res = symmetric_witness(model, task, task.group, rng)
            elif all(h is HeadKind.QUAT for h in model.heads) and model.n <= 3 and config.task != "mat4":
                res = common_zero_witness(model, task, rng)
            else:
                print("no witness construction applies to this model", file=sys.stderr)
                return EXIT_NO_WITNESS
            print(f"q: {' '.join(_fmt(c) for c in res.q)}")
            print(f"residual: {res.residual:.3e}")
            print(f"error_deg: {_fmt(np.degrees(res.error))}")
            return 0
    if not w.found:
        print(f"no witness: {w.message}", file=sys.stderr)
        return EXIT_NO_WITNESS
    print(f"t0: {_fmt(w.t0)}")
    print("rotation: " + " ".join(_fmt(c) for c in w.rotation.ravel()))
    print(f"error_deg: {_fmt(np.degrees(w.error))}")
    return 0


# --------------------------------------------------------------------------
# decompose4


def read_matrix(path, n: int = 4):
    values = np.array(Path(path).read_text().split(), dtype=float)
    if values.size != n * n:
        raise InvalidInputError(f"expected {n * n} numbers, found {values.size}")
    return values.reshape(n, n)


def cmd_decompose4(args) -> int:
    A = read_matrix(args.matrix)
    try:
        qL, qR = decompose_rot4(A)
    except NotARotationError as exc:
        resid = np.abs(A @ A.T - np.eye(4)).max()
        print(f"not a rotation: {exc}; |A A^T - I|_max = {resid:.3e}, det = {np.linalg.det(A):.12g}",
              file=sys.stderr)
        return EXIT_VIOLATION
    theta, phi = rotation_angles4(A)
    print("qL: " + " ".join(_fmt(c) for c in qL))
    print("qR: " + " ".join(_fmt(c) for c in qR))
    print(f"theta: {_fmt(theta)}")
    print(f"phi: {_fmt(phi)}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotensemble", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify-analytic", help="coverage sweep of the analytic quaternion and Euler ensembles")
    v.add_argument("--samples", type=int, default=1_000_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="-")
    v.set_defaults(func=cmd_verify_analytic)

    b = sub.add_parser("bounds", help="closed-form and certified worst-case error per symmetry group")
    b.add_argument("--group", help="cN, dN, t, o or i (default: the standard table)")
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bounds)

    t = sub.add_parser("train", help="train an ensemble and write its percentile curve")
    t.add_argument("--task", choices=["mat3", "mat4", "pointcloud"], default="mat3")
    t.add_argument("--rep", default="quat", help="quat, euler-xyz, euler-xzy, euler-mix, 6d, 5d or quatpair")
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--hidden", type=int, nargs="+")
    t.add_argument("--iters", type=int, default=50_000)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-final", type=float, default=1e-5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--penalty-schedule", default="off", help="'weight,hold,end' or 'off'")
    t.add_argument("--hard-mining", action="store_true")
    t.add_argument("--supervision", choices=["standard", "region", "identity-left"], default="standard")
    t.add_argument("--region-iters", type=int, default=0)
    t.add_argument("--group", help="point-cloud symmetry: d2 or c1")
    t.add_argument("--noise", type=int, nargs=2, default=(0, 0), metavar=("START", "END"))
    t.add_argument("--noise-sigma", type=float, default=0.0)
    t.add_argument("--samples", type=int, default=100_000, help="test samples for the error curve")
    t.add_argument("--witness", action="store_true", help="also run the witness search and report its error")
    t.add_argument("--checkpoint")
    t.add_argument("--out", default="-")
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("witness", help="search a trained model for its guaranteed large error")
    src = w.add_mutually_exclusive_group(required=True)
    src.add_argument("checkpoint", nargs="?")
    src.add_argument("--analytic", action="store_true", help="probe the analytic four-branch ensemble")
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_witness)

    d = sub.add_parser("decompose4", help="quaternion pair and plane angles of a 4x4 rotation")
    d.add_argument("matrix", help="text file with 16 whitespace-separated numbers, row-major")
    d.set_defaults(func=cmd_decompose4)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
