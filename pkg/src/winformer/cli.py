"""Command-line interface.

Subcommands: ``info`` (analytic cost tables), ``gradcheck`` (finite-difference
verification of the full backward pass), ``probe`` (cross-window Jacobian
sparsity), ``train`` (desk-scale synthetic training), ``ablate`` (the four
configuration-axis comparisons). Exit codes: 0 success, 1 check failure,
2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import AXES, ablate, crosswindow_model_config, default_dataset
from .config import ConfigError, GeometryError, ModelConfig, TrainConfig, load_model_config, load_train_config, preset, tiny
from .costing import count_flops
from .model import init_params, model_forward
from .probe import cross_window_summary
from .tensor import Tensor, grad_check
from .train import cross_entropy, train_toy

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

GRADCHECK_THRESHOLD = 1e-4


def _echo_config(label: str, doc: dict) -> None:
    print(f"{label}: {json.dumps(doc, sort_keys=True)}")


def _resolve_model(spec: str) -> ModelConfig:
    """A preset name (win-t/win-s/win-b/tiny) or a path to a JSON config."""
    normalized = spec.strip().lower().replace("_", "-")
    if normalized in ("win-t", "win-s", "win-b", "tiny"):
        return preset(normalized)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"model {spec!r} is neither a preset nor an existing config file")
    return load_model_config(path)


def _cmd_info(args) -> int:
    cfg = _resolve_model(args.model)
    _echo_config("model", cfg.to_dict())
    report = count_flops(cfg, args.input)
    print(report.table())
    print(f"totals: {report.total_params / 1e6:.2f}M params, {report.total_macs / 1e9:.3f}G MACs at input {args.input}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = tiny() if args.config is None else load_model_config(Path(args.config))
    _echo_config("model", cfg.to_dict())
    rng = np.random.default_rng(args.seed)
    params = init_params(cfg, args.seed, dtype=np.float64)
    x = Tensor(rng.normal(0.0, 1.0, size=(1, cfg.input_size, cfg.input_size, 3)), requires_grad=True)
    label = np.array([0])

    def loss_of(t: Tensor) -> Tensor:
        return cross_entropy(model_forward(t, params, cfg, training=False), label)

    err = grad_check(loss_of, x, eps=args.eps)
    print(f"max relative error: {err:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})")
    return EXIT_OK if err <= GRADCHECK_THRESHOLD else EXIT_CHECK_FAILED


def _cmd_probe(args) -> int:
    cfg = tiny() if args.config is None else load_model_config(Path(args.config))
    if args.conv is not None:
        cfg = replace(cfg, conv_placement="late_residual" if args.conv == "on" else "none")
    if args.shift is not None:
        cfg = replace(cfg, shifted=args.shift == "on")
    _echo_config("model", cfg.to_dict())
    summary = cross_window_summary(cfg, stage=args.stage, seed=args.seed)
    for line in summary.lines():
        print(line)
    return EXIT_OK if summary.matches_prediction else EXIT_CHECK_FAILED


def _cmd_train(args) -> int:
    cfg = crosswindow_model_config() if args.config is None else load_model_config(Path(args.config))
    tcfg = TrainConfig() if args.train_config is None else load_train_config(Path(args.train_config))
    _echo_config("model", cfg.to_dict())
    _echo_config("train", tcfg.to_dict())
    dataset = default_dataset(cfg, n=args.samples, seed=tcfg.seed + 1000)
    eval_set = default_dataset(cfg, n=args.samples, seed=tcfg.seed + 2000)
    log = train_toy(cfg, tcfg, dataset, eval_dataset=eval_set, out_dir=args.out)
    final = log.rows[-1]
    print(f"final: step {final.step}, train_acc {final.train_acc:.3f}, eval_acc {final.eval_acc:.3f}")
    print(f"wrote {Path(args.out) / 'metrics.csv'} and {Path(args.out) / 'checkpoint.ckpt'}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = crosswindow_model_config()
    tcfg = TrainConfig(steps=args.steps) if args.train_config is None else load_train_config(Path(args.train_config))
    _echo_config("model", cfg.to_dict())
    _echo_config("train", tcfg.to_dict())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"ablate_{args.axis}.csv"
    rows = ablate(args.axis, base_cfg=cfg, train_cfg=tcfg, out_path=out_path)
    for r in rows:
        print(f"{r.variant}: params {r.params:,}, macs {r.macs:,}, final_acc {r.final_acc:.3f}")
    print(f"wrote {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="winformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="analytic parameter/MAC table for a model")
    p.add_argument("--model", default="win-t", help="win-t | win-s | win-b | tiny | path to config.json")
    p.add_argument("--input", type=int, default=224, help="input image side length")
    p.set_defaults(fn=_cmd_info)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full backward pass")
    p.add_argument("--config", default=None, help="model config JSON (default: desk-scale tiny preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("probe", help="cross-window Jacobian sparsity probe")
    p.add_argument("--config", default=None, help="model config JSON (default: desk-scale tiny preset)")
    p.add_argument("--conv", choices=("on", "off"), default=None, help="override the conv sublayer")
    p.add_argument("--shift", choices=("on", "off"), default=None, help="override window shifting")
    p.add_argument("--stage", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("train", help="train on the synthetic crosswindow task")
    p.add_argument("--config", default=None, help="model config JSON (default: desk-scale crosswindow model)")
    p.add_argument("--train-config", default=None, help="train config JSON")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", required=True, help="output directory for metrics.csv and checkpoint.ckpt")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("ablate", help="run one configuration-axis comparison")
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--train-config", default=None, help="train config JSON")
    p.add_argument("--steps", type=int, default=300, help="training steps per variant (ignored with --train-config)")
    p.add_argument("--out", required=True, help="output directory for the comparison CSV")
    p.set_defaults(fn=_cmd_ablate)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, GeometryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
