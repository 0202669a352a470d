"""Embedding providers: one fixed-width vector per templated post.

Three provider kinds share a single contract:

* ``stub`` -- deterministic feature hashing of the prompt's whitespace
  tokens (image reference basenames join as pseudo-tokens) into ``dim``
  signed buckets, then optional L2 normalization.  Dependency-free and
  stable across processes, so pipeline tests have ground truth.
* ``precomputed_file`` -- serves rows from an existing EMBM matrix keyed
  by post id.
* ``remote`` -- calls an embedder service over HTTP
  (``POST <endpoint>/v1/embed``), shipping image bytes as base64.

``image_policy="first_only"`` mirrors models that accept a single image
per sequence: providers then consume only the first reference and flag the
vector as truncated when more were present.
"""

from __future__ import annotations

import base64
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import store
from .prompt import TemplateConfig, TemplatedPost, render_template

PROVIDER_KINDS = ("stub", "precomputed_file", "remote")
POOLING_MODES = ("mean", "last_token")
IMAGE_POLICIES = ("first_only", "all")

DEFAULT_DIM = 768
REMOTE_MAX_INFLIGHT = 4


class EmbedError(Exception):
    pass


class ProviderUnavailable(EmbedError):
    pass


class DimensionMismatch(EmbedError):
    pass


class ImageUnreadable(EmbedError):
    def __init__(self, ref: str, detail: str = ""):
        self.ref = ref
        super().__init__(f"image not readable: {ref}" + (f" ({detail})" if detail else ""))


class UnknownPostId(EmbedError):
    pass


class PartialWriteDetected(EmbedError):
    pass


class EmptySequence(EmbedError):
    pass


class RaggedSequence(EmbedError):
    pass


@dataclass(frozen=True)
class ProviderDescriptor:
    """Declarative provider selection, as written in pipeline configs.

    ``seed`` salts the stub hash; ``images_root`` anchors relative image
    references for the remote kind (defaults to the corpus directory).
    """

    kind: str = "stub"
    dim: int = DEFAULT_DIM
    pooling: str = "mean"
    normalize: bool = True
    image_policy: str = "first_only"
    endpoint_or_path: str = ""
    seed: int = 0
    images_root: str = ""

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ValueError(f"kind must be one of {PROVIDER_KINDS}")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.image_policy not in IMAGE_POLICIES:
            raise ValueError(f"image_policy must be one of {IMAGE_POLICIES}")
        if self.kind in ("precomputed_file", "remote") and not self.endpoint_or_path:
            raise ValueError(f"endpoint_or_path required for kind={self.kind!r}")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    dim: int
    post_id: str
    truncated_images: bool = False


def pool_tokens(seq, strategy: str) -> np.ndarray:
    """Reduce a sequence of equal-length vectors to one vector."""
    if strategy not in POOLING_MODES:
        raise ValueError(f"unknown pooling strategy {strategy!r}")
    vectors = [np.asarray(v, dtype=np.float64) for v in seq]
    if not vectors:
        raise EmptySequence("cannot pool an empty sequence")
    length = vectors[0].shape
    if any(v.shape != length for v in vectors):
        raise RaggedSequence("vectors in the sequence differ in length")
    if strategy == "mean":
        return np.mean(vectors, axis=0)
    return vectors[-1].copy()


def _policy_refs(refs: tuple[str, ...], image_policy: str) -> tuple[tuple[str, ...], bool]:
    if image_policy == "first_only" and len(refs) > 1:
        return refs[:1], True
    return refs, False


def _ref_basename(ref: str) -> str:
    return ref.rsplit("/", 1)[-1]


class StubEmbedder:
    """Feature-hashing embedder: deterministic in (text, image refs, dim, seed).

    Each lowercased whitespace token (plus each consumed image reference
    basename) hashes to one of ``dim`` buckets with a pseudo-random sign;
    bucket sums are then L2-normalized when ``normalize`` is set.  Safe for
    unbounded concurrent calls.
    """

    max_inflight = None  # no limit

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, normalize: bool = True,
                 image_policy: str = "first_only"):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self.normalize = normalize
        self.image_policy = image_policy
        self._key = f"vecfold-stub-{seed}".encode("utf-8")[:64]

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9, key=self._key).digest()
        value = int.from_bytes(digest[:8], "little")
        sign = 1.0 if digest[8] & 1 else -1.0
        return value % self.dim, sign

    def embed(self, templated: TemplatedPost) -> EmbeddingVector:
        refs, truncated = _policy_refs(templated.image_refs, self.image_policy)
        tokens = templated.text.lower().split()
        tokens += [_ref_basename(r).lower() for r in refs]
        acc = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            bucket, sign = self._bucket(token)
            acc[bucket] += sign
        if self.normalize:
            norm = np.linalg.norm(acc)
            if norm > 0.0:
                acc /= norm
        return EmbeddingVector(
            values=acc.astype(np.float32),
            dim=self.dim,
            post_id=templated.post_id,
            truncated_images=truncated,
        )


class PrecomputedFileEmbedder:
    """Serves embeddings from an EMBM matrix, keyed by post id."""

    max_inflight = None

    def __init__(self, path: str | Path):
        self._handle = store.open_matrix(path)
        self._row_of = {pid: i for i, pid in enumerate(self._handle.ids)}
        self.dim = self._handle.d

    def embed(self, templated: TemplatedPost) -> EmbeddingVector:
        row = self._row_of.get(templated.post_id)
        if row is None:
            raise UnknownPostId(
                f"post {templated.post_id!r} not present in {self._handle.path}"
            )
        return EmbeddingVector(
            values=self._handle.get_row(row),
            dim=self.dim,
            post_id=templated.post_id,
            truncated_images=False,
        )


class RemoteEmbedder:
    """HTTP client for the embedder-service wire protocol."""

    max_inflight = REMOTE_MAX_INFLIGHT

    def __init__(self, endpoint: str, dim: int, pooling: str = "mean",
                 normalize: bool = True, image_policy: str = "first_only",
                 images_root: str | Path = ".", timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.dim = dim
        self.pooling = pooling
        self.normalize = normalize
        self.image_policy = image_policy
        self.images_root = Path(images_root)
        self.timeout = timeout
        import requests

        self._session = requests.Session()
        self._requests = requests

    def _load_image(self, ref: str) -> str:
        path = self.images_root / ref
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ImageUnreadable(ref, str(exc)) from None
        return base64.b64encode(data).decode("ascii")

    def embed(self, templated: TemplatedPost) -> EmbeddingVector:
        refs, truncated = _policy_refs(templated.image_refs, self.image_policy)
        payload = {
            "id": templated.post_id,
            "text": templated.text,
            "images": [self._load_image(r) for r in refs],
            "pooling": self.pooling,
            "normalize": self.normalize,
        }
        try:
            resp = self._session.post(
                f"{self.endpoint}/v1/embed", json=payload, timeout=self.timeout
            )
        except self._requests.RequestException as exc:
            raise ProviderUnavailable(f"{self.endpoint}: {exc}") from None
        if resp.status_code >= 500:
            raise ProviderUnavailable(f"{self.endpoint}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise EmbedError(
                f"embed request for {templated.post_id!r} rejected: "
                f"HTTP {resp.status_code}: {resp.text[:200]}"
            )
        body = resp.json()
        values = np.asarray(body.get("embedding", []), dtype=np.float32)
        if values.shape != (self.dim,):
            raise DimensionMismatch(
                f"provider returned {values.shape[0] if values.ndim == 1 else values.shape} "
                f"values, expected {self.dim}"
            )
        if not np.all(np.isfinite(values)):
            raise EmbedError(f"provider returned non-finite values for {templated.post_id!r}")
        return EmbeddingVector(
            values=values,
            dim=self.dim,
            post_id=templated.post_id,
            truncated_images=truncated or bool(body.get("truncated_images", False)),
        )


def build_provider(desc: ProviderDescriptor, corpus_dir: str | Path = "."):
    """Instantiate the provider a descriptor names."""
    if desc.kind == "stub":
        return StubEmbedder(
            dim=desc.dim, seed=desc.seed, normalize=desc.normalize,
            image_policy=desc.image_policy,
        )
    if desc.kind == "precomputed_file":
        return PrecomputedFileEmbedder(desc.endpoint_or_path)
    return RemoteEmbedder(
        endpoint=desc.endpoint_or_path, dim=desc.dim, pooling=desc.pooling,
        normalize=desc.normalize, image_policy=desc.image_policy,
        images_root=desc.images_root or corpus_dir,
    )


def embed_post(provider, templated: TemplatedPost) -> EmbeddingVector:
    vec = provider.embed(templated)
    if vec.values.shape != (provider.dim,):
        raise DimensionMismatch(
            f"provider produced shape {vec.values.shape}, expected ({provider.dim},)"
        )
    return vec


@dataclass
class EmbedRunStats:
    embedded: int = 0
    reused: int = 0
    truncated_posts: int = 0
    failed_post_id: str | None = None


def embed_corpus(
    provider,
    corpus,
    template: TemplateConfig,
    out_path: str | Path,
    batch_size: int = 64,
    resume: bool = False,
    max_workers: int = 1,
) -> tuple[store.MatrixHandle, EmbedRunStats]:
    """Embed every post in corpus order into an EMBM matrix.

    Rows are written by a single writer in corpus order regardless of
    completion order; the header and id sidecar advance per batch, so an
    interrupted run can resume.  With ``resume=True`` rows already
    checkpointed are kept (their ids must match the corpus prefix) and the
    provider is only called for the remainder.

    Provider failures propagate with the offending post id; rows already
    checkpointed stay valid.
    """
    out_path = Path(out_path)
    stats = EmbedRunStats()

    writer = None
    if resume and out_path.exists():
        try:
            writer = store.resume_matrix(out_path)
        except store.StoreError as exc:
            raise PartialWriteDetected(f"{out_path}: {exc}") from None
        if writer.d != provider.dim:
            writer.close()
            raise DimensionMismatch(
                f"existing matrix has d={writer.d}, provider dim={provider.dim}"
            )
        done = store.read_ids(writer.ids_path)
        corpus_ids = corpus.ids()
        if done != corpus_ids[: len(done)]:
            writer.close()
            raise PartialWriteDetected(
                f"{out_path}: checkpointed ids do not match the corpus prefix"
            )
        if len(done) > len(corpus_ids):
            writer.close()
            raise PartialWriteDetected(
                f"{out_path}: checkpoint has more rows than the corpus"
            )
        stats.reused = len(done)
    if writer is None:
        writer = store.create_matrix(out_path, provider.dim)

    todo = list(corpus)[stats.reused :]

    def one(post):
        try:
            vec = embed_post(provider, render_template(post, template))
        except EmbedError as exc:
            exc.post_id = post.id
            exc.args = (f"post {post.id!r}: {exc}",)
            raise
        return post.id, vec

    limit = provider.max_inflight or max_workers
    workers = max(1, min(max_workers, limit))
    try:
        if workers == 1:
            results = map(one, todo)
            _drain(results, writer, batch_size, stats)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                _drain(pool.map(one, todo), writer, batch_size, stats)
    except EmbedError:
        writer.close()  # checkpoint what completed
        raise
    writer.close()
    return store.open_matrix(out_path), stats


def _drain(results, writer, batch_size, stats):
    pending = 0
    for post_id, vec in results:
        writer.append_row(vec.values, post_id)
        stats.embedded += 1
        if vec.truncated_images:
            stats.truncated_posts += 1
        pending += 1
        if pending >= batch_size:
            writer.flush()
            pending = 0
