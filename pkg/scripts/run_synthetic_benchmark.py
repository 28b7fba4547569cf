"""End-to-end synthetic benchmark: generate, train, evaluate, report.

Usage:
    python3 scripts/run_synthetic_benchmark.py --out-dir results/
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from causalflow.cfm_train import TrainConfig, train
from causalflow.metrics import evaluate_all
from causalflow.ode_engine import OdeConfig
from causalflow.scm_data import default_config, generate_ihdp_like, split, standardize
from causalflow.velocity_net import FlowModel, NetConfig, save_model


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d-x", type=int, default=10)
    ap.add_argument("--noise-sd", type=float, default=1.0)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--batch-size", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--ipw", action="store_true")
    ap.add_argument("--test-fraction", type=float, default=0.1)
    ap.add_argument("--n-steps", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="benchmark_out")
    args = ap.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = default_config(n=args.n, d_x=args.d_x, seed=args.seed,
                         noise_sd=args.noise_sd)
    ds = generate_ihdp_like(cfg)
    train_ds, test_ds = split(ds, args.test_fraction, seed=args.seed)
    print(f"generated n={ds.n} d_x={ds.d_x}; "
          f"train {train_ds.n} / test {test_ds.n}")

    std_train, scaler = standardize(train_ds)
    net_cfg = NetConfig(d_x=ds.d_x)
    train_cfg = TrainConfig(max_iters=args.iters, batch_size=args.batch_size,
                            lr=args.lr, ipw=args.ipw, seed=args.seed)
    t0 = time.perf_counter()
    net, report = train(std_train, net_cfg, train_cfg)
    train_s = time.perf_counter() - t0
    first = report.loss_history[0][1]
    print(f"trained {report.iters_run} iters in {train_s:.1f}s  "
          f"loss {first:.4f} -> {report.final_loss:.4f}")

    model = FlowModel(net=net, scaler=scaler, train_meta={
        "final_loss": report.final_loss, "iters_run": report.iters_run,
        "train_config": train_cfg.to_dict()})
    save_model(model, out_dir / "model.json")

    t0 = time.perf_counter()
    rep = evaluate_all(model, train_ds, test_ds,
                       OdeConfig(n_steps=args.n_steps), seed=args.seed,
                       noise_sd=args.noise_sd)
    eval_s = time.perf_counter() - t0
    print(f"evaluated in {eval_s:.1f}s (rows in/out: "
          f"{rep.meta['rows_in']}/{rep.meta['rows_out']})")
    for name, vals in sorted(rep.metrics.items()):
        cells = "  ".join(f"{tag}={v:.4f}" for tag, v in vals.items())
        print(f"  {name:<22} {cells}")

    doc = rep.to_dict()
    doc["meta"]["train_seconds"] = round(train_s, 2)
    doc["meta"]["eval_seconds"] = round(eval_s, 2)
    doc["meta"]["loss_first"] = first
    doc["meta"]["loss_final"] = report.final_loss
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_dir / 'report.json'} and {out_dir / 'model.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
