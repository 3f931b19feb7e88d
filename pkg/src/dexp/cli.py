"""Command line interface.

Typical runs::

    dexp explain --image cat.png --reference-image dog.png --out results/
    dexp explain --image cat.png --reference-text "a photo of a cat" \
        --embedder bridge --bridge-cmd "clip-bridge --model default"
    dexp eval-deletion --image cat.png --reference-image dog.png
    dexp sweep --param p_keep --values 0.1,0.3,0.5,0.7,0.9 ...
    dexp converge --n-masks 100,500,2000 --seeds 0,1,2 ...

Every subcommand writes attribution maps in the DXA1 format, rendered
heatmap overlays, and a ``metrics.txt`` with one key=value record per
line. Options may also come from a flat ``key: value`` config file via
--config; explicit flags win over file values. The seed falls back to
the DEXP_SEED environment variable when neither flag nor file sets one.
"""

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .bridge import BridgeEmbedder
from .embedders import PatchMeanEmbedder, ToyMlpEmbedder
from .evaluation import (
    average_sensitivity,
    curve_auc,
    incremental_deletion,
    mprt,
    seed_convergence,
)
from .exceptions import CapabilityError, ConfigurationError, DexpError
from .explainer import SELECTION_MODES, ExplainerConfig, explain_distance
from .io import load_image, parse_kv_block, render_heatmap, save_attribution
from .masking import MaskConfig

EMBEDDERS = ("patch-mean", "toy-mlp", "bridge")
SWEEP_PARAMS = ("p_keep", "feature_res", "n_masks", "fraction")
SCHEMES = ("top_down", "bottom_up", "independent")


def _parse_res(text: str) -> tuple[int, int]:
    head, sep, tail = str(text).lower().partition("x")
    if not sep:
        raise ConfigurationError(f"expected HxW (like 8x8), got {text!r}")
    try:
        return int(head), int(tail)
    except ValueError:
        raise ConfigurationError(f"expected HxW (like 8x8), got {text!r}") from None


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _parse_baseline(text: str):
    values = _parse_floats(text)
    if not values:
        raise ConfigurationError(f"empty baseline {text!r}")
    return values[0] if len(values) == 1 else values


def _parse_range(text: str) -> tuple[float, float]:
    values = _parse_floats(text)
    if len(values) != 2 or values[0] >= values[1]:
        raise ConfigurationError(f"expected lo,hi with lo < hi, got {text!r}")
    return values[0], values[1]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))  # shortest exact round-trip form
    return str(value)


def _metric_lines(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(" ".join(f"{k}={_fmt(v)}" for k, v in record.items()) + "\n")


def _write_curve(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + "\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(float(v)) for v in row) + "\n")


class Run:
    """Effective settings for one invocation: flags over config file
    over defaults, with DEXP_SEED as the seed fallback."""

    def __init__(self, args):
        self.args = args
        self.file_data = {}
        if getattr(args, "config", None):
            self.file_data = parse_kv_block(
                Path(args.config).read_text(encoding="utf-8")
            )

    def get(self, key: str, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.file_data:
            return self.file_data[key]
        return default

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise ConfigurationError(f"--{key.replace('_', '-')} is required")
        return value

    def get_int(self, key: str, default=None) -> int:
        raw = self.get(key, default)
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{key} must be an integer, got {raw!r}") from None

    def get_float(self, key: str, default=None) -> float:
        raw = self.get(key, default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{key} must be a number, got {raw!r}") from None

    @property
    def seed(self) -> int:
        return self.get_int("seed", os.environ.get("DEXP_SEED", "0"))

    @property
    def n_jobs(self) -> int:
        return self.get_int("n_jobs", "1")

    @property
    def value_range(self) -> tuple[float, float]:
        return _parse_range(self.get("value_range", "0,255"))

    @property
    def alpha(self) -> float:
        return self.get_float("alpha", "0.55")

    def out_dir(self) -> Path:
        out = Path(self.get("out", "dexp-out"))
        out.mkdir(parents=True, exist_ok=True)
        return out

    def explainer_config(self, n_masks: int | None = None) -> ExplainerConfig:
        mask_config = MaskConfig(
            n_masks=(int(n_masks) if n_masks is not None
                     else self.get_int("n_masks", "1000")),
            p_keep=self.get_float("p_keep", "0.5"),
            feature_res=_parse_res(self.get("feature_res", "8x8")),
            seed=self.seed,
        )
        return ExplainerConfig(
            mask_config=mask_config,
            selection_mode=self.get("mode", "mirror"),
            selection_fraction=self.get_float("fraction", "0.10"),
            baseline=_parse_baseline(self.get("baseline", "0")),
        )

    def build_embedder(self):
        kind = self.get("embedder", "patch-mean")
        if kind == "patch-mean":
            return PatchMeanEmbedder(grid=_parse_res(self.get("grid", "2x2")))
        if kind == "toy-mlp":
            return ToyMlpEmbedder(
                layer_sizes=_parse_ints(self.get("mlp_layers", "64,32")),
                seed=self.get_int("mlp_seed", "0"),
                softmax=_parse_bool(self.get("mlp_softmax", "false")),
            )
        if kind == "bridge":
            command = self.get("bridge_cmd")
            if not command:
                raise ConfigurationError("--bridge-cmd is required with --embedder bridge")
            return BridgeEmbedder(command)
        raise ConfigurationError(f"unknown embedder {kind!r}")

    def load_explained(self) -> np.ndarray:
        resize = self.get("resize")
        return load_image(
            self.require("image"),
            grayscale=_parse_bool(self.get("grayscale", "false")),
            resize=_parse_res(resize) if resize else None,
        )

    def load_reference_image(self) -> np.ndarray:
        # same preprocessing as the explained image so dims line up
        resize = self.get("resize")
        return load_image(
            self.require("reference_image"),
            grayscale=_parse_bool(self.get("grayscale", "false")),
            resize=_parse_res(resize) if resize else None,
        )

    def resolve_reference(self, embedder) -> np.ndarray:
        keys = ("reference_image", "reference_text", "reference_vector")
        given = [key for key in keys if self.get(key) is not None]
        if len(given) != 1:
            raise ConfigurationError(
                "exactly one of --reference-image, --reference-text or "
                "--reference-vector must be given"
            )
        key = given[0]
        if key == "reference_image":
            return np.asarray(embedder.embed(self.load_reference_image()))
        if key == "reference_text":
            embed_text = getattr(embedder, "embed_text", None)
            if embed_text is None:
                raise CapabilityError(
                    "text references need a backend with a text encoder "
                    "(--embedder bridge)"
                )
            return np.asarray(embed_text(self.get(key)))
        path = self.get(key)
        vector = np.load(path) if str(path).endswith(".npy") else np.loadtxt(path)
        return np.asarray(vector, dtype=np.float64).ravel()

    def echo(self, config: ExplainerConfig) -> dict:
        mc = config.mask_config
        return {
            "n_masks": mc.n_masks,
            "p_keep": mc.p_keep,
            "feature_res": f"{mc.feature_res[0]}x{mc.feature_res[1]}",
            "mode": config.selection_mode,
            "fraction": config.selection_fraction,
            "seed": mc.seed,
        }


def _write_map(amap, image, out: Path, stem: str, run: Run):
    map_path = out / f"{stem}.dxa1"
    png_path = out / f"{stem}.png"
    save_attribution(amap, map_path)
    render_heatmap(amap, image, png_path, alpha=run.alpha, value_range=run.value_range)
    return map_path, png_path


def _close(embedder) -> None:
    close = getattr(embedder, "close", None)
    if callable(close):
        close()


def cmd_explain(args) -> int:
    run = Run(args)
    out = run.out_dir()
    embedder = run.build_embedder()
    try:
        image = run.load_explained()
        reference = run.resolve_reference(embedder)
        config = run.explainer_config()
        amap, records = explain_distance(
            image, reference, embedder, config, n_jobs=run.n_jobs
        )
        map_path, png_path = _write_map(amap, image, out, "attribution", run)
        kept = [r.distance for r in records if not r.discarded]
        _metric_lines(out / "metrics.txt", [
            {"command": "explain", **run.echo(config),
             "map": map_path, "heatmap": png_path},
            {"record": "distances", "n_used": len(kept),
             "n_discarded": len(records) - len(kept),
             "distance_min": min(kept), "distance_max": max(kept),
             "distance_mean": float(np.mean(kept))},
        ])
        print(f"wrote {map_path}, {png_path} and {out / 'metrics.txt'}")
        return 0
    finally:
        _close(embedder)


def cmd_eval_deletion(args) -> int:
    run = Run(args)
    out = run.out_dir()
    embedder = run.build_embedder()
    try:
        image = run.load_explained()
        reference = run.resolve_reference(embedder)
        config = run.explainer_config()
        amap, _ = explain_distance(image, reference, embedder, config, n_jobs=run.n_jobs)
        map_path, png_path = _write_map(amap, image, out, "attribution", run)

        fill = run.get("fill")
        step = run.get_float("step_fraction", "0.02")
        deletion_seed = run.get_int("deletion_seed", str(run.seed))
        metrics = [{"command": "eval-deletion", **run.echo(config),
                    "step_fraction": step, "map": map_path, "heatmap": png_path}]
        for order in ("lodf", "hidf", "random"):
            curve = incremental_deletion(
                image, amap, embedder, reference, order=order,
                step_fraction=step,
                fill=_parse_baseline(fill) if fill is not None else None,
                seed=deletion_seed, value_range=run.value_range,
            )
            curve_path = out / f"deletion_{order}.txt"
            _write_curve(curve_path, ("fraction", "delta_d"),
                         zip(curve.fractions, curve.delta_d))
            metrics.append({"record": "deletion", "order": order,
                            "auc": curve_auc(curve),
                            "points": len(curve.fractions), "curve": curve_path})
        _metric_lines(out / "metrics.txt", metrics)
        print(f"wrote deletion curves and {out / 'metrics.txt'}")
        return 0
    finally:
        _close(embedder)


def cmd_eval_sensitivity(args) -> int:
    run = Run(args)
    out = run.out_dir()
    embedder = run.build_embedder()
    try:
        image = run.load_explained()
        reference = run.resolve_reference(embedder)
        config = run.explainer_config()
        lo, hi = run.value_range
        n_samples = run.get_int("n_samples", "20")
        perturb_std = run.get_float("perturb_std", str(0.1 * (hi - lo)))
        sensitivity_seed = run.get_int("sensitivity_seed", str(run.seed))

        # masks stay fixed across perturbed runs: same config, same seed
        def explain_fn(perturbed):
            amap, _ = explain_distance(
                perturbed, reference, embedder, config, n_jobs=run.n_jobs
            )
            return amap.values

        base_map, _ = explain_distance(image, reference, embedder, config,
                                       n_jobs=run.n_jobs)
        map_path, png_path = _write_map(base_map, image, out, "attribution", run)
        value = average_sensitivity(
            explain_fn, image, n_samples=n_samples, perturb_std=perturb_std,
            seed=sensitivity_seed, value_range=run.value_range,
        )
        _metric_lines(out / "metrics.txt", [
            {"command": "eval-sensitivity", **run.echo(config),
             "n_samples": n_samples, "perturb_std": perturb_std,
             "average_sensitivity": value,
             "map": map_path, "heatmap": png_path},
        ])
        print(f"average_sensitivity={value:.6g}")
        return 0
    finally:
        _close(embedder)


def cmd_eval_mprt(args) -> int:
    run = Run(args)
    out = run.out_dir()
    embedder = run.build_embedder()
    try:
        if run.get("reference_image") is None:
            raise ConfigurationError(
                "eval-mprt re-embeds the reference under each randomized "
                "model, so the reference must be given as --reference-image"
            )
        image = run.load_explained()
        reference_item = run.load_reference_image()
        config = run.explainer_config()
        scheme = run.get("scheme", "top_down")
        report = mprt(image, reference_item, embedder, scheme, config,
                      seed=run.get_int("mprt_seed", str(run.seed)),
                      n_jobs=run.n_jobs)

        map_path, png_path = _write_map(report.base, image, out, "mprt_base", run)
        metrics = [{"command": "eval-mprt", **run.echo(config), "scheme": scheme,
                    "layer": 0, "rho": 1.0, "map": map_path, "heatmap": png_path}]
        for entry in report.entries:
            stem = f"mprt_{scheme}_k{entry.layer}"
            map_path, png_path = _write_map(entry.attribution, image, out, stem, run)
            metrics.append({"record": "mprt", "scheme": scheme,
                            "layer": entry.layer, "rho": entry.rho,
                            "map": map_path, "heatmap": png_path})
        _metric_lines(out / "metrics.txt", metrics)
        print(f"wrote {len(report.entries) + 1} maps and {out / 'metrics.txt'}")
        return 0
    finally:
        _close(embedder)


def cmd_converge(args) -> int:
    run = Run(args)
    out = run.out_dir()
    embedder = run.build_embedder()
    try:
        image = run.load_explained()
        reference = run.resolve_reference(embedder)
        mask_counts = _parse_ints(run.get("n_masks", "100,500,2000"))
        seeds = _parse_ints(run.get("seeds", "0,1,2,3,4"))
        config = run.explainer_config(n_masks=max(mask_counts))
        rows = seed_convergence(image, reference, embedder, config,
                                seeds=seeds, mask_counts=mask_counts,
                                n_jobs=run.n_jobs)
        table_path = out / "convergence.txt"
        _write_curve(table_path, ("n_masks", "mean_pixel_std"), rows)
        metrics = [{"command": "converge",
                    "seeds": ",".join(str(s) for s in seeds),
                    "table": table_path}]
        for count, std in rows:
            metrics.append({"record": "convergence", "n_masks": count,
                            "mean_pixel_std": std})
        _metric_lines(out / "metrics.txt", metrics)
        print(f"wrote {table_path} and {out / 'metrics.txt'}")
        return 0
    finally:
        _close(embedder)


def cmd_sweep(args) -> int:
    run = Run(args)
    out = run.out_dir()
    param = run.require("param")
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(
            f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}"
        )
    tokens = [tok.strip() for tok in str(run.require("values")).split(",") if tok.strip()]
    if not tokens:
        raise ConfigurationError("--values must name at least one setting")
    # feature_res values contain no comma, so a flat comma split is safe
    embedder = run.build_embedder()
    try:
        image = run.load_explained()
        reference = run.resolve_reference(embedder)
        base = run.explainer_config()
        metrics = [{"command": "sweep", "param": param,
                    "values": ",".join(tokens), **run.echo(base)}]
        for token in tokens:
            if param == "fraction":
                config = dataclasses.replace(base, selection_fraction=float(token))
            else:
                cast = {"p_keep": float, "n_masks": int, "feature_res": _parse_res}[param]
                mask_config = dataclasses.replace(
                    base.mask_config, **{param: cast(token)}
                )
                config = dataclasses.replace(base, mask_config=mask_config)
            amap, _ = explain_distance(image, reference, embedder, config,
                                       n_jobs=run.n_jobs)
            map_path, png_path = _write_map(amap, image, out,
                                            f"sweep_{param}_{token}", run)
            metrics.append({"record": "sweep", "param": param, "value": token,
                            "map": map_path, "heatmap": png_path})
        _metric_lines(out / "metrics.txt", metrics)
        print(f"wrote {len(tokens)} maps and {out / 'metrics.txt'}")
        return 0
    finally:
        _close(embedder)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    inputs = common.add_argument_group("inputs")
    inputs.add_argument("--image", help="path of the image to explain")
    inputs.add_argument("--reference-image", help="reference given as an image")
    inputs.add_argument("--reference-text",
                        help="reference given as text (bridge backends only)")
    inputs.add_argument("--reference-vector",
                        help="reference given as a vector file (.npy or text)")
    inputs.add_argument("--resize", help="resize inputs to HxW before embedding")
    inputs.add_argument("--grayscale", action="store_const", const="true",
                        help="load images as single-channel")
    inputs.add_argument("--value-range", dest="value_range",
                        help="pixel value range lo,hi (default 0,255)")

    emb = common.add_argument_group("embedder")
    emb.add_argument("--embedder", choices=EMBEDDERS,
                     help="embedding backend (default patch-mean)")
    emb.add_argument("--grid", help="patch-mean pooling grid HxW (default 2x2)")
    emb.add_argument("--mlp-layers", dest="mlp_layers",
                     help="toy MLP layer sizes, last is the output dim (default 64,32)")
    emb.add_argument("--mlp-seed", dest="mlp_seed", help="toy MLP weight seed")
    emb.add_argument("--mlp-softmax", dest="mlp_softmax", action="store_const",
                     const="true", help="apply softmax to the toy MLP output")
    emb.add_argument("--bridge-cmd", dest="bridge_cmd",
                     help="command spawning a bridge backend process")

    exp = common.add_argument_group("explainer")
    exp.add_argument("--n-masks", dest="n_masks",
                     help="number of masks (default 1000); comma list for converge")
    exp.add_argument("--p-keep", dest="p_keep",
                     help="keep probability per grid cell (default 0.5)")
    exp.add_argument("--feature-res", dest="feature_res",
                     help="mask grid resolution HxW (default 8x8)")
    exp.add_argument("--mode", choices=SELECTION_MODES,
                     help="mask selection mode (default mirror)")
    exp.add_argument("--fraction", help="selection fraction (default 0.10)")
    exp.add_argument("--baseline",
                     help="mask fill value, scalar or per-channel list (default 0)")

    runtime = common.add_argument_group("run")
    runtime.add_argument("--config", help="flat key: value config file")
    runtime.add_argument("--out", help="output directory (default dexp-out)")
    runtime.add_argument("--seed", help="global seed (default $DEXP_SEED or 0)")
    runtime.add_argument("--n-jobs", dest="n_jobs",
                         help="worker threads for mask embedding (default 1)")
    runtime.add_argument("--alpha", help="heatmap overlay opacity (default 0.55)")

    parser = argparse.ArgumentParser(
        prog="dexp",
        description="Explain the cosine distance between an image and a "
                    "reference by randomized masking.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("explain", parents=[common],
                       help="write an attribution map for one image/reference pair")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("eval-deletion", parents=[common],
                       help="incremental deletion curves and their AUCs")
    p.add_argument("--step-fraction", dest="step_fraction",
                   help="deleted fraction per step (default 0.02)")
    p.add_argument("--fill", help="fill value for deleted pixels (default mid-range)")
    p.add_argument("--deletion-seed", dest="deletion_seed",
                   help="seed for the random deletion order")
    p.set_defaults(func=cmd_eval_deletion)

    p = sub.add_parser("eval-sensitivity", parents=[common],
                       help="average sensitivity under input perturbations")
    p.add_argument("--n-samples", dest="n_samples",
                   help="number of perturbed inputs (default 20)")
    p.add_argument("--perturb-std", dest="perturb_std",
                   help="noise std (default 10%% of the value range)")
    p.add_argument("--sensitivity-seed", dest="sensitivity_seed",
                   help="seed for the perturbation noise")
    p.set_defaults(func=cmd_eval_sensitivity)

    p = sub.add_parser("eval-mprt", parents=[common],
                       help="model parameter randomization test")
    p.add_argument("--scheme", choices=SCHEMES,
                   help="randomization scheme (default top_down)")
    p.add_argument("--mprt-seed", dest="mprt_seed",
                   help="seed for the randomized weights")
    p.set_defaults(func=cmd_eval_mprt)

    p = sub.add_parser("converge", parents=[common],
                       help="map stability across seeds per mask count")
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2,3,4)")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("sweep", parents=[common],
                       help="re-run the explainer over a parameter range")
    p.add_argument("--param", help="one of " + ", ".join(SWEEP_PARAMS))
    p.add_argument("--values", help="comma-separated settings for --param")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the diagnostic
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DexpError as exc:
        print(f"dexp: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dexp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
