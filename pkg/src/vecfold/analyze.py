"""Cluster characterization: per-cluster sizes, centroid-nearest posts, and
scatter exports for human labeling of cluster themes.

Reports embed the full run configuration so any figure can be reproduced
from the report alone.  Assigning names to clusters is deliberately left
to whoever reads the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TOP_N = 10
TITLE_EXCERPT_CHARS = 80

# Fixed 20-color palette (the tab20 hex values), indexed by cluster id mod 20.
PALETTE20 = (
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c",
    "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
    "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f",
    "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
)


class AnalyzeError(Exception):
    pass


class UnknownCluster(AnalyzeError):
    pass


class RunMismatch(AnalyzeError):
    pass


class LengthMismatch(AnalyzeError):
    pass


class UnwritablePath(AnalyzeError):
    pass


def top_near_centroid(matrix, model, cluster_id: int, top_n: int = DEFAULT_TOP_N):
    """Rows of one cluster ranked by Euclidean distance to its centroid.

    Returns at most ``top_n`` (row_index, distance) pairs, ascending by
    distance with ties broken by the lower row index.
    """
    if not 0 <= cluster_id < model.k:
        raise UnknownCluster(f"cluster {cluster_id} out of range for k={model.k}")
    rows = np.flatnonzero(np.asarray(model.labels) == cluster_id)
    if rows.size == 0:
        return []
    x = getattr(matrix, "rows", matrix)
    member_rows = np.asarray(x[rows], dtype=np.float64)
    diff = member_rows - model.centroids[cluster_id]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.lexsort((rows, dist))[:top_n]
    return [(int(rows[i]), float(dist[i])) for i in order]


@dataclass(frozen=True)
class ClusterReport:
    k: int
    per_cluster: tuple[dict, ...]
    run_metadata: dict
    created_at: str

    def sizes(self) -> list[int]:
        return [c["size"] for c in self.per_cluster]


def _excerpt(title: str) -> str:
    return title[:TITLE_EXCERPT_CHARS]


def cluster_report(
    corpus,
    matrix,
    model,
    projection,
    top_n: int = DEFAULT_TOP_N,
    run_metadata: dict | None = None,
    created_at: str = "",
) -> ClusterReport:
    """Assemble the full per-cluster report.

    All inputs must come from the same pipeline run: the matrix id sidecar
    must equal the corpus ids row for row, the label array must cover every
    row, and projection indices must stay in range.  Violations raise
    RunMismatch.
    """
    n = matrix.n
    if len(corpus) != n:
        raise RunMismatch(f"corpus has {len(corpus)} posts but matrix has {n} rows")
    if matrix.ids != corpus.ids():
        raise RunMismatch("matrix id sidecar does not match the corpus ids")
    labels = np.asarray(model.labels)
    if labels.shape[0] != n:
        raise RunMismatch(f"labels cover {labels.shape[0]} rows, matrix has {n}")
    if projection is not None and projection.source_sample.size:
        if projection.source_sample.min() < 0 or projection.source_sample.max() >= n:
            raise RunMismatch("projection sample indices out of range for the matrix")

    per_cluster = []
    for cid in range(model.k):
        members = top_near_centroid(matrix, model, cid, top_n)
        top_posts = []
        for row, dist in members:
            post = corpus[row]
            top_posts.append(
                {
                    "post_id": post.id,
                    "distance": dist,
                    "title_excerpt": _excerpt(post.title),
                    "image_count": len(post.images),
                }
            )
        per_cluster.append(
            {
                "cluster_id": cid,
                "size": int(np.sum(labels == cid)),
                "top_posts": top_posts,
            }
        )
    return ClusterReport(
        k=model.k,
        per_cluster=tuple(per_cluster),
        run_metadata=run_metadata or {},
        created_at=created_at,
    )


def report_to_json(report: ClusterReport) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline.
    Serialize -> parse -> serialize is byte-stable."""
    doc = {
        "k": report.k,
        "per_cluster": list(report.per_cluster),
        "run_metadata": report.run_metadata,
        "created_at": report.created_at,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> ClusterReport:
    doc = json.loads(text)
    return ClusterReport(
        k=doc["k"],
        per_cluster=tuple(doc["per_cluster"]),
        run_metadata=doc["run_metadata"],
        created_at=doc["created_at"],
    )


def report_to_markdown(report: ClusterReport) -> str:
    """Human-readable rendering, clusters in descending size order."""
    lines = ["# Cluster report", ""]
    lines.append(f"- clusters: {report.k}")
    lines.append(f"- points: {sum(report.sizes())}")
    if report.created_at:
        lines.append(f"- created: {report.created_at}")
    lines.append("")
    ordered = sorted(report.per_cluster, key=lambda c: (-c["size"], c["cluster_id"]))
    for c in ordered:
        lines.append(f"## Cluster {c['cluster_id']} ({c['size']} posts)")
        lines.append("")
        if not c["top_posts"]:
            lines.append("(empty cluster)")
        for rank, post in enumerate(c["top_posts"], start=1):
            title = post["title_excerpt"] or "(no title)"
            lines.append(
                f"{rank}. `{post['post_id']}` d={post['distance']:.4f} "
                f"images={post['image_count']} -- {title}"
            )
        lines.append("")
    return "\n".join(lines)


def _scale_points(coords: np.ndarray, width: int, height: int, margin: int):
    if coords.shape[0] == 0:
        return np.empty((0, 2))
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    unit = (coords - lo) / span
    px = margin + unit[:, 0] * (width - 2 * margin)
    py = height - margin - unit[:, 1] * (height - 2 * margin)  # y grows upward
    return np.stack([px, py], axis=1)


def scatter_export(projection, labels, out_path: str | Path, format: str = "csv") -> Path:
    """Write the labeled 2D scatter as CSV (``x,y,cluster``) or SVG.

    Output bytes are a pure function of the inputs.  The SVG uses one fill
    color per cluster id from the fixed 20-color palette and includes a
    legend of the cluster ids present.
    """
    labels = np.asarray(labels)
    coords = projection.coords
    if labels.shape[0] != coords.shape[0]:
        raise LengthMismatch(
            f"{labels.shape[0]} labels for {coords.shape[0]} projected points"
        )
    out_path = Path(out_path)
    if format == "csv":
        text = "x,y,cluster\n" + "".join(
            f"{float(x)!r},{float(y)!r},{int(c)}\n" for (x, y), c in zip(coords, labels)
        )
    elif format == "svg":
        text = _scatter_svg(coords, labels)
    else:
        raise ValueError(f"unknown format {format!r}")
    try:
        out_path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise UnwritablePath(f"{out_path}: {exc}") from None
    return out_path


def _scatter_svg(coords: np.ndarray, labels: np.ndarray,
                 width: int = 800, height: int = 600, margin: int = 40) -> str:
    points = _scale_points(coords, width, height, margin)
    present = sorted(int(c) for c in np.unique(labels)) if labels.size else []
    legend_width = 110 if present else 0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width + legend_width}" height="{height}" '
        f'viewBox="0 0 {width + legend_width} {height}">',
        f'<rect x="0" y="0" width="{width + legend_width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="#cccccc"/>',
    ]
    for (px, py), c in zip(points, labels):
        color = PALETTE20[int(c) % len(PALETTE20)]
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2" fill="{color}"/>')
    if present:
        parts.append(f'<g font-family="sans-serif" font-size="12">')
        parts.append(
            f'<text x="{width + 10}" y="{margin}" font-weight="bold">clusters</text>'
        )
        for i, cid in enumerate(present):
            y = margin + 18 + i * 16
            color = PALETTE20[cid % len(PALETTE20)]
            parts.append(
                f'<rect x="{width + 10}" y="{y - 9}" width="10" height="10" fill="{color}"/>'
            )
            parts.append(f'<text x="{width + 26}" y="{y}">{cid}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
