"""``phifno`` command line: generate | train | evaluate | convergence | predict.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O failure.
"""
import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import dataset as D
from . import fno
from . import training as TR
from .geometry import EllipseParams, SamplerError, hausdorff_distance, zero_level_points
from .mesh import EmptyDomainError
from .phifem import SolverError, affine_case, convergence_study, sine_case

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(C.dumps(cfg))
    return out


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2))


def _report(obj):
    print(json.dumps(obj, indent=2))


# -------------------------------------------------------------------- generate


def cmd_generate(cfg):
    spec = C.generation_spec(cfg)
    workers = 1 if cfg["deterministic"] else cfg["data"]["workers"]
    start = time.perf_counter()
    ds = D.generate_dataset(cfg["data"]["n_samples"], spec, workers)
    elapsed = time.perf_counter() - start
    out = _out_dir(cfg)
    D.write_dataset(ds, out)
    _report(
        {
            "path": str(out),
            "n_samples": len(ds),
            "shape": list(ds.shape),
            "failures": len(ds.failures),
            "wall_time_s": round(elapsed, 3),
        }
    )


# ----------------------------------------------------------------------- train


def _load_splits(cfg, path=None):
    ds = D.read_dataset(path or cfg["data"]["path"])
    s = cfg["split"]
    idx = D.split_indices(len(ds), (s["train"], s["val"], s["test"]), cfg["seed"])
    return ds, dict(zip(("train", "val", "test"), idx))


def cmd_train(cfg):
    ds, idx = _load_splits(cfg)
    out = _out_dir(cfg)
    _dump(out / "split.json", {k: v.tolist() for k, v in idx.items()})
    tr = TR.to_batchable(ds.subset(idx["train"]))
    va = TR.to_batchable(ds.subset(idx["val"]))
    tcfg = C.train_config(cfg)
    hyper = C.hyperparams(cfg)
    state = TR.load_state(cfg["train"]["resume"]) if cfg["train"]["resume"] else None
    every = tcfg.checkpoint_every

    def on_epoch(st):
        TR.write_log(st.log, out / "epochs.csv")
        if every and st.epoch % every == 0:
            fno.save_checkpoint(st.params, out / f"epoch_{st.epoch:05d}.ckpt", {"epoch": st.epoch})
            TR.save_state(st, out / "state.npz")

    start = time.perf_counter()
    state = TR.train(tr, va, hyper, tcfg, state, on_epoch)
    elapsed = time.perf_counter() - start
    TR.write_log(state.log, out / "epochs.csv")
    TR.save_state(state, out / "state.npz")
    fno.save_checkpoint(state.params, out / "last.ckpt", {"epoch": state.epoch})
    fno.save_checkpoint(state.best, out / "best.ckpt", {"epoch": state.best_epoch})
    _, e1 = TR.evaluate(state.best, va)
    summary = {
        "epochs": state.epoch,
        "best_epoch": state.best_epoch,
        "best_val_loss": state.best_val_loss,
        "initial_val_loss": state.initial_val_loss,
        "val_E1": e1,
        "param_count": fno.param_count(hyper),
        "wall_time_s": round(elapsed, 3),
    }
    _dump(out / "summary.json", summary)
    _report(summary)


# -------------------------------------------------------------------- evaluate


def _nearest_training_shape(ds, eval_ids, train_ids):
    train_pts = [zero_level_points(ds.phi[i]) for i in train_ids]
    out = []
    for i in eval_ids:
        pts = zero_level_points(ds.phi[i])
        out.append(min(hausdorff_distance(pts, t) for t in train_pts))
    return out


def cmd_evaluate(cfg):
    e = cfg["evaluate"]
    ds, idx = _load_splits(cfg, e["dataset"])
    ids = np.arange(len(ds)) if e["split"] == "all" else idx[e["split"]]
    if len(ids) == 0:
        raise C.ConfigError(f"split '{e['split']}' is empty")
    checkpoints = e["checkpoints"] or [str(Path(cfg["out"]) / "best.ckpt")]
    for ck in checkpoints:
        if not Path(ck).is_file():
            raise FileNotFoundError(f"checkpoint not found: {ck}")
    data = TR.to_batchable(ds.subset(ids))
    hd = _nearest_training_shape(ds, ids, idx["train"]) if e["hausdorff"] else None
    out = _out_dir(cfg)
    summaries = []
    for ck in checkpoints:
        params = fno.load_checkpoint(ck)
        u_pred = np.empty_like(data.f)
        seconds = np.empty(len(data))
        for k in range(len(data)):
            t0 = time.perf_counter()
            w = fno.fno_forward(params, data.f[k], data.phi[k], data.g[k])
            u_pred[k] = fno.reconstruct_prediction(params, w, data.phi[k], data.g[k])
            seconds[k] = time.perf_counter() - t0
        u_true = data.u
        e1 = [TR.metric_E1(u_true[k], u_pred[k], data.S0[k]) for k in range(len(data))]
        name = "per_sample.csv" if len(checkpoints) == 1 else f"per_sample_{Path(ck).stem}.csv"
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "E1", "inference_s"] + (["hausdorff_to_train"] if hd else []))
            for k, i in enumerate(ids):
                writer.writerow([int(i), repr(e1[k]), repr(seconds[k])] + ([repr(hd[k])] if hd else []))
        summaries.append({"checkpoint": str(ck), "csv": name, "E1": TR.summarize(e1),
                          "mean_inference_s": float(seconds.mean())})
    result = summaries[0] if len(summaries) == 1 else {"checkpoints": summaries}
    _dump(out / "summary.json", result)
    _report(result)


# ----------------------------------------------------------------- convergence


def cmd_convergence(cfg):
    c = cfg["convergence"]
    dom = c["domain"]
    if dom["kind"] == "disk":
        domain = EllipseParams(dom["x0"], dom["y0"], dom["lx"], dom["lx"], 0.0)
    else:
        domain = EllipseParams(dom["x0"], dom["y0"], dom["lx"], dom["ly"], dom["theta"])
    case = sine_case() if c["case"] == "sine" else affine_case()
    rows = convergence_study(case, domain, c["resolutions"], c["sigma_D"])
    out = _out_dir(cfg)
    with open(out / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "h", "error", "order"])
        for r in rows:
            writer.writerow([r.n, repr(r.h), repr(r.error), "" if r.order is None else repr(r.order)])
    _report([{"n": r.n, "h": r.h, "error": r.error, "order": r.order} for r in rows])


# --------------------------------------------------------------------- predict


def cmd_predict(cfg):
    p = cfg["predict"]
    ck = p["checkpoint"] or str(Path(cfg["out"]) / "best.ckpt")
    if not Path(ck).is_file():
        raise FileNotFoundError(f"checkpoint not found: {ck}")
    params = fno.load_checkpoint(ck)
    truth = None
    if p["inputs"]:
        with np.load(p["inputs"]) as z:
            missing = {"f", "phi", "g"} - set(z.files)
            if missing:
                raise OSError(f"{p['inputs']}: missing arrays {sorted(missing)}")
            f_h, phi_h, g_h = (np.array(z[k], dtype=float) for k in ("f", "phi", "g"))
            if "w" in z:
                truth = phi_h * z["w"] + g_h
            elif "u" in z:
                truth = np.array(z["u"], dtype=float)
        source = {"inputs": p["inputs"]}
    else:
        ds = D.read_dataset(p["dataset"] or cfg["data"]["path"])
        i = int(p["index"])
        if not 0 <= i < len(ds):
            raise C.ConfigError(f"predict.index {i} outside dataset of size {len(ds)}")
        f_h, phi_h, g_h = ds.f[i], ds.phi[i], ds.g[i]
        truth = ds.u[i]
        source = {"dataset": p["dataset"] or cfg["data"]["path"], "index": i}
    t0 = time.perf_counter()
    out_grid = fno.fno_forward(params, f_h, phi_h, g_h)
    u = fno.reconstruct_prediction(params, out_grid, phi_h, g_h)
    elapsed = time.perf_counter() - t0
    out = _out_dir(cfg)
    np.savez(out / "prediction.npz", output=out_grid, u=u)
    report = {"checkpoint": ck, **source, "inference_s": elapsed, "shape": list(u.shape)}
    if truth is not None:
        from .mesh import masks_from_levelset

        report["E1"] = TR.metric_E1(truth, u, masks_from_levelset(phi_h).S0)
    _dump(out / "report.json", report)
    _report(report)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "convergence": cmd_convergence,
    "predict": cmd_predict,
}

NUMERICAL_ERRORS = (SolverError, SamplerError, EmptyDomainError, FloatingPointError, D.GenerationError)


def build_parser():
    parser = argparse.ArgumentParser(prog="phifno", description="phi-FEM data generation, FNO training and evaluation")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="overrides the configured seed")
    parser.add_argument("--deterministic", action="store_true", help="serialize all work")
    parser.add_argument("--out", help="output directory (overrides the configured one)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        user = C.load(args.config) if args.config else {}
        cfg = C.resolve(user, args.seed, args.out, args.deterministic or None)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        COMMANDS[args.command](cfg)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
