"""Pipeline orchestration: one declarative config drives every stage.

Stages run in a fixed order -- ingest, template, embed, cluster, project,
report -- inside a locked run directory.  Each stage's inputs are hashed
(its config subset plus its upstream stage hashes); a stage is skipped on
rerun only when its recorded hash matches and its outputs are present and
complete, so artifacts can never go stale silently.  The run manifest
records the full config, stage hashes, timings, and library versions,
which makes a finished run directory self-describing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analyze, cluster, embed, project, store
from .corpus import CorpusHandle, corpus_stats, load_corpus, stats_to_dict
from .embed import ProviderDescriptor, build_provider, embed_corpus
from .prompt import TemplateConfig, render_template

log = logging.getLogger(__name__)

STAGES = ("ingest", "template", "embed", "cluster", "project", "report")

EPOCH_ISO = "1970-01-01T00:00:00Z"

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".vecfold.lock"

ARTIFACTS = {
    "ingest": ("corpus_stats.json",),
    "template": ("template_preview.json",),
    "embed": ("embeddings.embm", "embeddings.embm.ids"),
    "cluster": ("kmeans_model.json", "labels.klbl"),
    "project": ("projection.csv",),
    "report": ("report.json", "report.md", "scatter.svg"),
}


class PipelineError(Exception):
    pass


class ConfigError(PipelineError):
    pass


class StageError(PipelineError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class LockHeld(PipelineError):
    pass


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class MinibatchSettings:
    enabled: bool = True
    batch_size: int = 1024


@dataclass(frozen=True)
class KMeansSettings:
    k: int = 20
    tol: float = 1e-4
    max_iter: int = 300
    restarts: int = 5
    seed: int = 0
    minibatch: MinibatchSettings = field(default_factory=MinibatchSettings)


@dataclass(frozen=True)
class ProjectionSettings:
    sample_size: int = 70_000
    n_neighbors: int = 15
    min_dist: float = 0.1
    epochs: int = 200
    seed: int = 0


@dataclass(frozen=True)
class ReportSettings:
    top_n: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    corpus_path: str
    output_dir: str
    template: TemplateConfig = field(default_factory=TemplateConfig)
    provider: ProviderDescriptor = field(default_factory=ProviderDescriptor)
    kmeans: KMeansSettings = field(default_factory=KMeansSettings)
    projection: ProjectionSettings = field(default_factory=ProjectionSettings)
    report: ReportSettings = field(default_factory=ReportSettings)

    def __post_init__(self):
        if self.kmeans.k < 1:
            raise ConfigError("kmeans.k must be >= 1")
        if self.projection.sample_size < 1:
            raise ConfigError("projection.sample_size must be >= 1")
        if self.report.top_n < 1:
            raise ConfigError("report.top_n must be >= 1")


def _build(cls, data: dict, context: str):
    """Construct a (possibly nested) settings dataclass from a dict,
    rejecting unknown keys with a config-level error."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key '{context}{key}'")
        ftype = fields[key].type
        nested = {
            "TemplateConfig": TemplateConfig,
            "ProviderDescriptor": ProviderDescriptor,
            "KMeansSettings": KMeansSettings,
            "MinibatchSettings": MinibatchSettings,
            "ProjectionSettings": ProjectionSettings,
            "ReportSettings": ReportSettings,
        }.get(ftype if isinstance(ftype, str) else getattr(ftype, "__name__", ""))
        if nested is not None and isinstance(value, dict):
            kwargs[key] = _build(nested, value, f"{context}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, ConfigError) as exc:
        raise ConfigError(f"invalid config under {context or 'top level'}: {exc}") from None


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    if "output_dir" not in data:
        env = os.environ.get("VECFOLD_OUTPUT_DIR")
        if env:
            data["output_dir"] = env
    if "corpus_path" not in data:
        raise ConfigError("corpus_path is required")
    if "output_dir" not in data:
        raise ConfigError("output_dir is required (or set VECFOLD_OUTPUT_DIR)")
    return _build(PipelineConfig, data, "")


def config_to_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


def load_config_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values parse as JSON when they
    can, otherwise as literal strings."""
    data = json.loads(json.dumps(data))  # deep copy
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part!r} is not a config section")
        node[parts[-1]] = value
    return data


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: PipelineConfig) -> str:
    return hashlib.sha256(canonical_json(config_to_dict(config)).encode()).hexdigest()


# ---------------------------------------------------------------- locking


class RunLock:
    """One pipeline process per run directory, via an exclusive pid file.

    A lock whose recorded pid is no longer alive counts as stale and is
    replaced.
    """

    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_NAME
        self._held = False

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            pid = self._read_pid()
            if pid is not None and _pid_alive(pid):
                raise LockHeld(
                    f"{self.path} held by running pid {pid}"
                ) from None
            log.warning("replacing stale lock %s (pid %s)", self.path, pid)
            self.path.unlink(missing_ok=True)
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._held = True
        return self

    def _read_pid(self) -> int | None:
        try:
            return int(self.path.read_text().strip())
        except (OSError, ValueError):
            return None

    def __exit__(self, *exc):
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# ---------------------------------------------------------------- stages


@dataclass
class RunContext:
    config: PipelineConfig
    run_dir: Path
    threads: int = 1
    resume: bool = True
    deterministic: bool = False
    manifest: dict = field(default_factory=dict)
    _corpus: CorpusHandle | None = None

    def path(self, name: str) -> Path:
        return self.run_dir / name

    @property
    def corpus(self) -> CorpusHandle:
        if self._corpus is None:
            self._corpus = load_corpus(self.config.corpus_path, strict=False)
        return self._corpus

    def now(self) -> str:
        if self.deterministic:
            return EPOCH_ISO
        return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _stage_hash(name: str, ctx: RunContext, upstream: list[str]) -> str:
    cfg = config_to_dict(ctx.config)
    subset = {
        "ingest": {"corpus_path": cfg["corpus_path"]},
        "template": {"template": cfg["template"]},
        "embed": {"provider": cfg["provider"], "template": cfg["template"]},
        "cluster": {"kmeans": cfg["kmeans"]},
        "project": {"projection": cfg["projection"]},
        "report": {"report": cfg["report"], "config": cfg},
    }[name]
    payload = canonical_json({"stage": name, "config": subset, "upstream": upstream})
    return hashlib.sha256(payload.encode()).hexdigest()


def _outputs_present(name: str, ctx: RunContext) -> bool:
    return all(ctx.path(a).exists() for a in ARTIFACTS[name])


def _embed_complete(ctx: RunContext) -> bool:
    try:
        handle = store.open_matrix(ctx.path("embeddings.embm"))
        return handle.n == len(ctx.corpus) and handle.ids == ctx.corpus.ids()
    except store.StoreError:
        return False


def _run_ingest(ctx: RunContext) -> dict:
    stats = corpus_stats(ctx.corpus)
    doc = stats_to_dict(stats)
    doc["skipped_lines"] = len(ctx.corpus.skipped)
    doc["unknown_keys"] = dict(sorted(ctx.corpus.unknown_keys.items()))
    ctx.path("corpus_stats.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return {"total_posts": stats.total_posts, "skipped_lines": doc["skipped_lines"]}


def _run_template(ctx: RunContext) -> dict:
    previews = []
    for post in ctx.corpus.posts[:10]:
        t = render_template(post, ctx.config.template)
        previews.append(
            {
                "post_id": t.post_id,
                "text": t.text,
                "image_refs": list(t.image_refs),
                "image_token_count": t.image_token_count,
            }
        )
    ctx.path("template_preview.json").write_text(
        json.dumps(previews, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return {"previews": len(previews)}


def _run_embed(ctx: RunContext) -> dict:
    corpus_dir = str(Path(ctx.config.corpus_path).parent)
    provider = build_provider(ctx.config.provider, corpus_dir=corpus_dir)
    out = ctx.path("embeddings.embm")
    resume = ctx.resume and out.exists()
    handle, stats = embed_corpus(
        provider,
        ctx.corpus,
        ctx.config.template,
        out,
        batch_size=64,
        resume=resume,
        max_workers=ctx.threads,
    )
    return {
        "rows": handle.n,
        "dim": handle.d,
        "embedded": stats.embedded,
        "reused_rows": stats.reused,
        "truncated_posts": stats.truncated_posts,
    }


def _run_cluster(ctx: RunContext) -> dict:
    if not ctx.path("embeddings.embm").exists():
        raise PipelineError("embeddings.embm not found; run the embed stage first")
    matrix = store.open_matrix(ctx.path("embeddings.embm"))
    kc = ctx.config.kmeans
    model = cluster.fit_kmeans(
        matrix,
        kc.k,
        tol=kc.tol,
        max_iter=kc.max_iter,
        restarts=kc.restarts,
        seed=kc.seed,
        minibatch=kc.minibatch.enabled,
        batch_size=kc.minibatch.batch_size,
        threads=ctx.threads,
    )
    cluster.save_model(model, ctx.path("kmeans_model.json"))
    cluster.save_labels(model.labels, ctx.path("labels.klbl"))
    return {"k": model.k, "inertia": model.inertia, "iterations": model.iterations}


def _run_project(ctx: RunContext) -> dict:
    if not ctx.path("embeddings.embm").exists():
        raise PipelineError("embeddings.embm not found; run the embed stage first")
    matrix = store.open_matrix(ctx.path("embeddings.embm"))
    pc = ctx.config.projection
    sample = project.viz_sample(matrix.n, pc.sample_size, pc.seed)
    proj = project.project_sample(
        matrix,
        sample,
        n_neighbors=pc.n_neighbors,
        min_dist=pc.min_dist,
        epochs=pc.epochs,
        rng_seed=pc.seed,
        threads=ctx.threads,
    )
    project.write_projection_csv(proj, ctx.path("projection.csv"))
    return {"points": int(proj.coords.shape[0])}


def _run_report(ctx: RunContext) -> dict:
    for needed, hint in (
        ("embeddings.embm", "embed"),
        ("kmeans_model.json", "cluster"),
        ("labels.klbl", "cluster"),
        ("projection.csv", "project"),
    ):
        if not ctx.path(needed).exists():
            raise PipelineError(f"{needed} not found; run the {hint} stage first")
    matrix = store.open_matrix(ctx.path("embeddings.embm"))
    labels = cluster.load_labels(ctx.path("labels.klbl"))
    model = cluster.load_model(ctx.path("kmeans_model.json"), labels=labels)
    proj = project.read_projection_csv(ctx.path("projection.csv"))
    cfg = config_to_dict(ctx.config)
    run_metadata = {
        "seed": ctx.config.kmeans.seed,
        "provider": cfg["provider"],
        "template": cfg["template"],
        "kmeans": cfg["kmeans"],
        "projection": cfg["projection"],
    }
    report = analyze.cluster_report(
        ctx.corpus,
        matrix,
        model,
        proj,
        top_n=ctx.config.report.top_n,
        run_metadata=run_metadata,
        created_at=ctx.now(),
    )
    ctx.path("report.json").write_text(analyze.report_to_json(report), encoding="utf-8")
    ctx.path("report.md").write_text(analyze.report_to_markdown(report), encoding="utf-8")
    sample_labels = labels[proj.source_sample]
    analyze.scatter_export(proj, sample_labels, ctx.path("scatter.svg"), format="svg")
    return {"clusters": report.k}


_RUNNERS = {
    "ingest": _run_ingest,
    "template": _run_template,
    "embed": _run_embed,
    "cluster": _run_cluster,
    "project": _run_project,
    "report": _run_report,
}

_UPSTREAM = {
    "ingest": (),
    "template": ("ingest",),
    "embed": ("template",),
    "cluster": ("embed",),
    "project": ("embed",),
    "report": ("cluster", "project"),
}


def _versions() -> dict:
    import scipy

    return {
        "vecfold": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return {}


def _write_manifest(ctx: RunContext) -> None:
    ctx.path(MANIFEST_NAME).write_text(
        json.dumps(ctx.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def run_pipeline(
    config: PipelineConfig,
    stages: tuple[str, ...] = STAGES,
    threads: int = 1,
    resume: bool = True,
    deterministic: bool = False,
) -> Path:
    """Execute the requested stages in order inside a locked run directory.

    Completed stages whose recorded input hash matches are skipped (and
    noted as reused in the manifest); a stage failure aborts with the stage
    name, leaving earlier artifacts and manifest entries intact.
    """
    for name in stages:
        if name not in STAGES:
            raise ConfigError(f"unknown stage {name!r}")
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    full_hash = config_hash(config)
    with RunLock(run_dir):
        previous = load_manifest(run_dir) if resume else {}
        ctx = RunContext(
            config=config,
            run_dir=run_dir,
            threads=threads,
            resume=resume,
            deterministic=deterministic,
        )
        ctx.manifest = {
            "run_id": full_hash[:12],
            "config": config_to_dict(config),
            "config_hash": full_hash,
            "created_at": ctx.now(),
            "deterministic": deterministic,
            "versions": _versions(),
            "stages": dict(previous.get("stages", {})),
        }

        hashes: dict[str, str] = {}
        for name in STAGES:
            upstream = [hashes[u] for u in _UPSTREAM[name] if u in hashes]
            hashes[name] = _stage_hash(name, ctx, upstream)
            if name not in stages:
                continue
            recorded = previous.get("stages", {}).get(name, {})
            complete = _outputs_present(name, ctx) and (
                name != "embed" or _embed_complete(ctx)
            )
            if resume and complete and recorded.get("hash") == hashes[name]:
                log.info("stage %-8s reused (hash match)", name)
                entry = dict(recorded)
                entry["reused"] = True
                ctx.manifest["stages"][name] = entry
                _write_manifest(ctx)
                continue
            log.info("stage %-8s running", name)
            start = time.monotonic()
            try:
                info = _RUNNERS[name](ctx)
            except Exception as exc:
                raise StageError(name, exc) from exc
            ctx.manifest["stages"][name] = {
                "hash": hashes[name],
                "outputs": list(ARTIFACTS[name]),
                "duration_s": round(time.monotonic() - start, 3),
                "completed_at": ctx.now(),
                "reused": False,
                "info": info,
            }
            _write_manifest(ctx)
    return run_dir
