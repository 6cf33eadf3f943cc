"""Contrast-driven image quadtree and depth-seeded splat generation.

The tree is built breadth first: every frontier node's contrast (the
luminance-weighted RGB mean-squared error of its pixels) is evaluated,
nodes above the threshold and larger than the minimum size split into
four children at the floor midpoints, the rest become leaves. Frontier
nodes are independent work items and levels are barriers; this serial
build produces the same leaf set a parallel one would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DepthFrame, backproject

LUMA_WEIGHTS = np.array([0.2989, 0.5870, 0.1140])


@dataclass
class QuadNode:
    x0: int
    y0: int
    w: int
    h: int
    contrast: float = 0.0
    is_leaf: bool = False

    def key(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.w, self.h)


@dataclass
class SplatSeed:
    position: np.ndarray  # (3,) world meters
    scale: float          # isotropic extent, meters
    color: np.ndarray     # (3,) in [0, 1]


def region_contrast(image: np.ndarray, node: QuadNode) -> float:
    """Luma-weighted mean squared deviation of the node's pixels."""
    region = image[node.y0:node.y0 + node.h, node.x0:node.x0 + node.w]
    mean = region.reshape(-1, 3).mean(axis=0)
    sq = (region.reshape(-1, 3) - mean) ** 2
    return float(LUMA_WEIGHTS @ (sq.sum(axis=0) / sq.shape[0]))


class _IntegralImage:
    """Per-channel sums and squared sums for O(1) region contrast."""

    def __init__(self, image: np.ndarray):
        h, w, _ = image.shape
        self.s = np.zeros((h + 1, w + 1, 3))
        self.s2 = np.zeros((h + 1, w + 1, 3))
        np.cumsum(np.cumsum(image, axis=0), axis=1, out=self.s[1:, 1:])
        np.cumsum(np.cumsum(image ** 2, axis=0), axis=1, out=self.s2[1:, 1:])

    def contrast(self, x0, y0, w, h) -> np.ndarray:
        """Vectorized over equal-length coordinate arrays."""
        def box(table):
            return (table[y0 + h, x0 + w] - table[y0, x0 + w]
                    - table[y0 + h, x0] + table[y0, x0])
        n = (w * h).astype(np.float64)[:, None]
        s = box(self.s)
        s2 = box(self.s2)
        var = s2 / n - (s / n) ** 2
        return np.maximum(var, 0.0) @ LUMA_WEIGHTS


def _subdivide(node: QuadNode) -> list[QuadNode]:
    """Four children at floor midpoints: TopLeft, BottomLeft, TopRight,
    BottomRight; zero-extent children are not created."""
    w1 = node.w // 2
    h1 = node.h // 2
    w2 = node.w - w1
    h2 = node.h - h1
    children = [
        QuadNode(node.x0, node.y0, w1, h1),
        QuadNode(node.x0, node.y0 + h1, w1, h2),
        QuadNode(node.x0 + w1, node.y0, w2, h1),
        QuadNode(node.x0 + w1, node.y0 + h1, w2, h2),
    ]
    return [c for c in children if c.w > 0 and c.h > 0]


def build_quadtree(image: np.ndarray, contrast_threshold: float = 0.1,
                   min_pixel: int = 1) -> list[QuadNode]:
    """Breadth-first, level-synchronous subdivision of the whole image.

    A node splits when its contrast exceeds the threshold and min(w, h)
    exceeds min_pixel; leaves tile the image exactly once.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.size == 0:
        raise ValueError("image is empty")
    h, w = image.shape[:2]
    integral = _IntegralImage(image)
    frontier = [QuadNode(0, 0, w, h)]
    leaves: list[QuadNode] = []
    while frontier:
        x0 = np.array([n.x0 for n in frontier])
        y0 = np.array([n.y0 for n in frontier])
        ww = np.array([n.w for n in frontier])
        hh = np.array([n.h for n in frontier])
        contrasts = integral.contrast(x0, y0, ww, hh)
        next_frontier: list[QuadNode] = []
        for node, c in zip(frontier, contrasts):
            node.contrast = float(c)
            if node.contrast > contrast_threshold and min(node.w, node.h) > min_pixel:
                next_frontier.extend(_subdivide(node))
            else:
                node.is_leaf = True
                leaves.append(node)
        frontier = next_frontier
    return leaves


def seed_splats(leaves: list[QuadNode], depth: DepthFrame) -> list[SplatSeed]:
    """One splat per leaf with valid depth at its center pixel.

    The center back-projects to world; the scale is the leaf's metric
    footprint at that depth (pixel width * depth / fx); the color is the
    leaf's mean RGB.
    """
    intr = depth.intrinsics
    seeds: list[SplatSeed] = []
    for leaf in leaves:
        u = leaf.x0 + leaf.w // 2
        v = leaf.y0 + leaf.h // 2
        d = depth.depth[v, u]
        if not np.isfinite(d) or d <= 0:
            continue
        cam = backproject(np.array([u], dtype=np.float64),
                          np.array([v], dtype=np.float64),
                          np.array([d]), intr)[0]
        world = depth.pose.to_world(cam[None])[0]
        if depth.color is not None:
            region = depth.color[leaf.y0:leaf.y0 + leaf.h, leaf.x0:leaf.x0 + leaf.w]
            color = region.reshape(-1, 3).mean(axis=0)
        else:
            color = np.full(3, 0.5)
        seeds.append(SplatSeed(position=world, scale=float(leaf.w * d / intr.fx),
                               color=color))
    return seeds
