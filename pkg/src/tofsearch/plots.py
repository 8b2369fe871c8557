"""SVG chart rendering for scaling curves and convergence fits.

Charts plot best score against NFE (the ledger-backed cost axis); a
fitted geometric-decay curve, when given, is drawn dashed over the
observed points.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import GeometricFit, ScalingCurve


def save_curve_svg(
    curve: ScalingCurve,
    path: Path,
    *,
    fit: Optional[GeometricFit] = None,
    title: Optional[str] = None,
) -> Path:
    path = Path(path)
    nfes = [p.nfe for p in curve.points]
    scores = [p.best_score for p in curve.points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(nfes, scores, marker="o", linewidth=1.5,
            label=f"{curve.algorithm} search")
    if fit is not None and not fit.degenerate:
        fitted = [fit.predict(p.n) for p in curve.points]
        ax.plot(nfes, fitted, linestyle="--", linewidth=1.2,
                label=f"fit: {fit.s_inf:.4g} - {fit.amplitude:.3g}"
                      f"*{fit.ratio:.3g}^n")
    ax.set_xlabel("NFE (denoise steps x temporal length)")
    ax.set_ylabel("best verifier score")
    ax.set_title(title or f"Test-time scaling: {curve.algorithm}")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
