"""Transfer configuration, trace records, and the method dispatcher."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..images import noise_image, resize_bilinear, resize_to_width
from ..nncore import NetworkSpec, forward, input_gradient, CONTENT_TAP
from .gal import gal_optimize
from .losses import CONTROLS, METHODS, build_method_loss
from .optim import lbfgs_minimize

DEFAULT_WIDTH = 64


@dataclass
class GalParams:
    rho0: float = 1.0
    rho_growth: float = 1.4
    outer_iters: int = 10
    inner_iters: int = 50


@dataclass
class TransferConfig:
    method: str = "Gatys"
    style_weight: float = 100.0
    layer_weights: dict | None = None
    iterations: int = 60
    seed: int = 0
    working_width: int = DEFAULT_WIDTH
    gal: GalParams = field(default_factory=GalParams)

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; known: {METHODS}")
        if self.method not in CONTROLS and self.style_weight < 0:
            raise ValueError("style_weight must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)

    HEADER = ("iter", "total", "content", "style", "violation", "rho")

    def append(self, **row):
        self.rows.append({k: row.get(k, 0.0) for k in self.HEADER} | row)

    def write_csv(self, path):
        with open(str(path), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.HEADER)
            for row in self.rows:
                writer.writerow([row[k] for k in self.HEADER])

    def totals(self):
        return [row["total"] for row in self.rows]


def run_transfer(style_img: np.ndarray, content_img: np.ndarray, net: NetworkSpec, config: TransferConfig):
    """Dispatch one transfer; returns (image in [0,1], LossTrace)."""
    config.validate()
    width = config.working_width
    style = resize_to_width(style_img, width)
    content = resize_to_width(content_img, width)
    trace = LossTrace()

    if config.method == "ContentControl":
        return content.copy(), trace
    if config.method == "StyleControl":
        return resize_bilinear(style, content.shape[0], content.shape[1]), trace

    if config.method == "GAL":
        img, rows = gal_optimize(
            style,
            content,
            net,
            init_img=noise_image(content.shape[0], content.shape[1], config.seed),
            alpha=config.style_weight,
            layer_weights=config.layer_weights,
            rho0=config.gal.rho0,
            rho_growth=config.gal.rho_growth,
            outer_iters=config.gal.outer_iters,
            inner_iters=config.gal.inner_iters,
        )
        for row in rows:
            trace.append(**row)
        return img, trace

    style_features = forward(style, net, tuple(t for t in net.taps if t != CONTENT_TAP))
    content_target = forward(content, net, [CONTENT_TAP])[CONTENT_TAP]
    loss = build_method_loss(
        config.method,
        style_features,
        content_target,
        alpha=config.style_weight,
        layer_weights=config.layer_weights,
    )
    init = noise_image(content.shape[0], content.shape[1], config.seed)
    shape = init.shape

    def fg(x):
        value, g = input_gradient(x.reshape(shape), net, loss, loss.taps)
        return value, g.ravel()

    def record(i, x, f):
        trace.append(
            iter=i,
            total=f,
            content=loss.components["content"],
            style=loss.components["style"],
            violation=0.0,
            rho=0.0,
        )

    best, _ = lbfgs_minimize(fg, init.ravel(), iterations=config.iterations, callback=record)
    return np.clip(best.reshape(shape), 0.0, 1.0), trace
