"""Command-line pipeline: simulate, discover, effects, train-explain, compare.

Every command is a pure function of its input files and resolved config.
Each output file starts with a provenance comment carrying the tool
version, the seed and a hash of the config plus input file contents.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .compare import DEFAULT_SHAP_THRESHOLD, compare
from .dataset import (
    MODE_COLUMNS,
    CodedDataset,
    SplitSpec,
    add_mode_column,
    clean,
    load_codebook,
    load_csv,
    smote,
    stratified_split,
)
from .discovery import Knowledge, discover_full, load_knowledge
from .effects import ADJUSTMENT_STRATEGY, DmlConfig, EffectsError, EffectsTable, total_effects_table
from .explain import mean_abs_shap, read_mean_abs_csv
from .graph import GraphError, find_cycle, from_dot
from .predictor import MlpConfig, accuracy, class_report, cross_validate, predict_classes, train_mlp
from .scm import SURVEY_PRESETS, TOY_PRESETS, load_preset, sample, true_effects

ERROR_PREFIX = "modecausal-error"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    preset: str | None = None
    n: int | None = None
    codebook: str | None = None
    knowledge: str = "builtin"
    alpha: float = 0.05
    max_depth: int | None = None
    seed: int | None = None
    target: str = "mode"
    smote_k: int = 5
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    cv_folds: int = 5
    shap_background: int = 100
    shap_rows: int = 200
    shap_threshold: float = DEFAULT_SHAP_THRESHOLD
    graph: str | None = None
    effects: str | None = None
    shap: str | None = None
    dml: dict = field(default_factory=dict)
    mlp: dict = field(default_factory=dict)

    def dml_config(self) -> DmlConfig:
        return DmlConfig(**{**self.dml, "seed": self.seed or 0})

    def mlp_config(self) -> MlpConfig:
        return MlpConfig(**{**self.mlp, "seed": self.seed or 0})


_PATH_FIELDS = ("input", "codebook", "graph", "effects", "shap")


def resolve_config(config_path: str | None, overrides: dict[str, Any]) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    known = {f.name for f in fields(RunConfig)}
    merged: dict[str, Any] = {}
    if config_path:
        obj = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        merged.update(obj)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**merged)
    DmlConfig(**cfg.dml)  # validate early
    MlpConfig(**cfg.mlp)
    return cfg


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(command: str, cfg: RunConfig) -> str:
    """Hash of the resolved config; file arguments contribute their contents, not their paths."""
    body = asdict(cfg)
    for key in _PATH_FIELDS:
        if body[key] is not None:
            body[key] = _file_digest(body[key])
    if cfg.knowledge not in ("builtin", "resolved", "none"):
        body["knowledge"] = _file_digest(cfg.knowledge)
    text = json.dumps({"command": command, "config": body}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def provenance(command: str, cfg: RunConfig) -> str:
    return f"modecausal {__version__} command={command} seed={cfg.seed} config_sha256={config_hash(command, cfg)}"


def _write_text(path: Path, body: str, header: str, comment: str = "#") -> None:
    path.write_text(f"{comment} {header}\n{body}", encoding="utf-8")


def _require_seed(cfg: RunConfig, command: str) -> int:
    if cfg.seed is None:
        raise ConfigError(f"{command} is stochastic; pass --seed or set seed in the config")
    return cfg.seed


def _one_source(cfg: RunConfig) -> None:
    if (cfg.input is None) == (cfg.preset is None):
        raise ConfigError("give exactly one of --input and --preset")


def load_data(cfg: RunConfig, command: str) -> CodedDataset:
    """Read --input with the codebook, or sample --preset; then drop invalid rows."""
    _one_source(cfg)
    if cfg.preset is not None:
        if cfg.n is None:
            raise ConfigError("--preset needs --n")
        seed = _require_seed(cfg, command)
        return sample(load_preset(cfg.preset), cfg.n, seed)
    codebook = load_codebook(cfg.codebook)
    return clean(load_csv(cfg.input, codebook), codebook)


def resolve_knowledge(spec: str) -> Knowledge:
    if spec == "none":
        return Knowledge()
    if spec in ("builtin", "resolved"):
        return load_knowledge(resolved=spec == "resolved")
    return load_knowledge(spec)


# --- commands -----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.preset is None:
        raise ConfigError("simulate needs --preset")
    if cfg.input is not None:
        raise ConfigError("simulate takes --preset, not --input")
    if cfg.n is None or cfg.n < 0:
        raise ConfigError("simulate needs a nonnegative --n")
    seed = _require_seed(cfg, "simulate")
    scm = load_preset(cfg.preset)
    head = provenance("simulate", cfg)
    data = sample(scm, cfg.n, seed)
    paths = [out / "data.csv", out / "codebook.json", out / "truth.dot", out / "true_effects.csv"]
    data.to_csv(paths[0], header_comment=head)
    _write_text(paths[1], json.dumps(scm.codebook().to_dict(), indent=1) + "\n", head)
    paths[2].write_text(scm.dag.to_dot(name="truth", header=head), encoding="utf-8")
    truth = true_effects(scm)
    nodes = list(scm.nodes)
    values = np.full((len(nodes), len(nodes)), np.nan)
    for (t, o), v in truth.items():
        values[nodes.index(t), nodes.index(o)] = v
    EffectsTable(tuple(nodes), values, "exact do-operator").to_csv(paths[3], decimals=None, header_comment=head)
    return paths


def cmd_discover(cfg: RunConfig, out: Path) -> list[Path]:
    data = load_data(cfg, "discover")
    result = discover_full(data, cfg.alpha, resolve_knowledge(cfg.knowledge), cfg.max_depth)
    head = provenance("discover", cfg)
    paths = [out / "graph.dot", out / "discovery_report.txt"]
    paths[0].write_text(result.graph.to_dot(header=head), encoding="utf-8")
    _write_text(paths[1], result.report(), head)
    for a, b in result.residual_undirected:
        print(f"WARNING: {a} -- {b} left undirected", file=sys.stderr)
    return paths


def cmd_effects(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.graph is None:
        raise ConfigError("effects needs --graph")
    g = from_dot(Path(cfg.graph).read_text(encoding="utf-8"))
    cyc = find_cycle(g)
    if cyc:
        raise GraphError(f"graph has a directed cycle: {' -> '.join(cyc)}")
    if g.sorted_undirected():
        a, b = g.sorted_undirected()[0]
        raise EffectsError(f"undirected edge {a} -- {b}; orient it before estimating effects")
    _require_seed(cfg, "effects")
    data = load_data(cfg, "effects")
    dml = cfg.dml_config()
    table = total_effects_table(g, data, dml)
    head = provenance("effects", cfg)
    paths = [out / "effects.csv", out / "effects_full.csv", out / "effects_meta.txt"]
    table.to_csv(paths[0], decimals=2, header_comment=head)
    table.to_csv(paths[1], decimals=None, header_comment=head)
    meta = [
        f"adjustment_strategy: {ADJUSTMENT_STRATEGY}",
        "estimator: cross-fitted double machine learning (boosted-tree nuisances, lasso final stage)",
        "units: change in outcome per one-code increase of the cause",
        "zeros: exact where the graph has no directed path from cause to effect",
        f"dml_config: {json.dumps(asdict(dml), sort_keys=True)}",
        f"rows: {data.n}",
    ]
    _write_text(paths[2], "\n".join(meta) + "\n", head)
    return paths


def _prepare_target(data: CodedDataset, target: str) -> tuple[CodedDataset, list[str]]:
    if target not in data.columns and all(m in data.columns for m in MODE_COLUMNS):
        data = add_mode_column(data, target)
    if target not in data.columns:
        raise ConfigError(f"target {target!r} not in data")
    features = [c for c in data.columns if c != target and c not in MODE_COLUMNS]
    if not features:
        raise ConfigError("no feature columns besides the target")
    return data.select(features + [target]), features


def _sorted_choice(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(n, k), replace=False))


def cmd_train_explain(cfg: RunConfig, out: Path) -> list[Path]:
    seed = _require_seed(cfg, "train-explain")
    data, features = _prepare_target(load_data(cfg, "train-explain"), cfg.target)
    mlp = cfg.mlp_config()
    target = cfg.target
    train, test = stratified_split(
        data, SplitSpec((("train", 1 - cfg.test_fraction), ("test", cfg.test_fraction)), target, seed)
    )
    if cfg.val_fraction > 0:
        fit, val = stratified_split(
            train, SplitSpec((("fit", 1 - cfg.val_fraction), ("val", cfg.val_fraction)), target, seed + 1)
        )
    else:
        fit, val = train, None
    fit_sm = smote(fit, target, cfg.smote_k, seed) if cfg.smote_k > 0 else fit
    model = train_mlp(fit_sm, val, mlp, target=target, features=features)

    def codes(d):
        return d.column(target) - d.variable(target).min_code

    test_pred = predict_classes(model, test)
    test_acc = accuracy(test_pred, codes(test))
    train_acc = accuracy(predict_classes(model, train), codes(train))
    counts = np.bincount(codes(test), minlength=len(model.classes))
    majority = 100.0 * counts.max() / counts.sum()
    cv = cross_validate(data, cfg.cv_folds, mlp, target, cfg.smote_k, cfg.smote_k > 0, cfg.val_fraction) \
        if cfg.cv_folds >= 2 else []

    rng = np.random.default_rng(seed)
    cols = [data.index(f) for f in features]
    background = train.values[_sorted_choice(rng, train.n, cfg.shap_background)][:, cols]
    explained = test.values[_sorted_choice(rng, test.n, cfg.shap_rows)][:, cols]
    report = mean_abs_shap(model, explained, background, features, model.classes)

    lines = [
        f"rows: total={data.n} train={train.n} (fit={fit.n}, val={0 if val is None else val.n}) "
        f"test={test.n} fit_after_smote={fit_sm.n}",
        f"features: {', '.join(features)}",
        f"epochs_run: {len(model.history['train_loss'])} best_epoch: {model.history.get('best_epoch', 'n/a')}",
        f"train_accuracy: {train_acc:.4f}",
        f"test_accuracy: {test_acc:.4f}",
        f"majority_baseline: {majority:.4f}",
        "per_class (precision, recall) on test:",
    ]
    for c, p, r in class_report(test_pred, codes(test), model.classes):
        lines.append(f"  {c}: {p:.4f} {r:.4f}")
    lines.append(f"cv_accuracy: [{', '.join(f'{a:.4f}' for a in cv)}]")
    if cv:
        lines.append(f"cv_spread: {max(cv) - min(cv):.4f}")
    lines.append(f"shap: background={len(background)} explained={len(explained)} "
                 f"efficiency_gap={report.efficiency_gap():.3e} (aggregate: mean |phi|)")
    for c, name in enumerate(model.classes):
        ranked = ", ".join(f"{f}={v:.4f}" for f, v in report.ranking(c))
        lines.append(f"  {name}: {ranked}")

    head = provenance("train-explain", cfg)
    paths = [out / "metrics.txt", out / "model.json", out / "shap_mean_abs.csv", out / "shap_instances.csv"]
    _write_text(paths[0], "\n".join(lines) + "\n", head)
    model.save(paths[1], header_comment=head)
    report.to_csv(paths[2], header_comment=head)
    report.instances_to_csv(paths[3], header_comment=head)
    return paths


def cmd_compare(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.effects is None or cfg.shap is None:
        raise ConfigError("compare needs --effects (full-precision effects CSV) and --shap (mean |SHAP| CSV)")
    result = compare(EffectsTable.from_csv(cfg.effects), read_mean_abs_csv(cfg.shap), cfg.shap_threshold)
    head = provenance("compare", cfg)
    paths = [out / "comparison.csv", out / "comparison.txt"]
    result.to_csv(paths[0], header_comment=head)
    _write_text(paths[1], result.report(), head)
    return paths


COMMANDS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "effects": cmd_effects,
    "train-explain": cmd_train_explain,
    "compare": cmd_compare,
}


# --- argument parsing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="modecausal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"modecausal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config", help="JSON file of settings; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        if data:
            p.add_argument("--input", help="coded CSV")
            p.add_argument("--preset", choices=SURVEY_PRESETS + TOY_PRESETS)
            p.add_argument("--n", type=int, help="rows to sample from --preset")
            p.add_argument("--codebook", help="JSON codebook for --input (default: shipped survey codebook)")

    p = sub.add_parser("simulate", help="sample a preset SCM with its true graph and effects")
    common(p)
    p = sub.add_parser("discover", help="PC search with background knowledge")
    common(p)
    p.add_argument("--knowledge", help="builtin, resolved, none, or a JSON file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p = sub.add_parser("effects", help="total-effect table from a directed graph")
    common(p)
    p.add_argument("--graph", help="DOT file with every edge oriented")
    p = sub.add_parser("train-explain", help="train the classifier and emit mean |SHAP|")
    common(p)
    p.add_argument("--target")
    p.add_argument("--smote-k", dest="smote_k", type=int)
    p.add_argument("--cv-folds", dest="cv_folds", type=int)
    p = sub.add_parser("compare", help="align causal effects with mean |SHAP|")
    common(p, data=False)
    p.add_argument("--effects", help="effects_full.csv from the effects command")
    p.add_argument("--shap", help="shap_mean_abs.csv from the train-explain command")
    p.add_argument("--threshold", dest="shap_threshold", type=float)
    return parser


def run(argv: Sequence[str] | None = None) -> list[Path]:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    out = Path(args.pop("out"))
    config_path = args.pop("config")
    cfg = resolve_config(config_path, args)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, out)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        for path in run(argv):
            print(path)
    except (ValueError, KeyError, OSError, TypeError) as exc:
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"{ERROR_PREFIX}: {type(exc).__name__}: {' '.join(msg.split())}", file=sys.stderr)
        return 1
    return 0
