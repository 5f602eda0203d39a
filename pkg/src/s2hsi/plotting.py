"""Report figures written next to the CSV outputs.

Everything renders through the Agg backend with fixed metadata so that
repeated runs produce identical PNG bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "savefig",
    "plot_mdl_curve",
    "plot_trace",
    "plot_band_metrics",
    "plot_loss_trace",
    "plot_srf",
    "plot_prior",
]

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "standard",
}


def savefig(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_mdl_curve(result, path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(result.ks, result.code_length, "o-", color="C0", ms=4)
        ax.axvline(result.order, color="C3", ls="--", lw=1, label=f"selected N = {result.order}")
        ax.set_xlabel("number of sources")
        ax.set_ylabel("code length")
        ax.set_xticks(result.ks)
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        savefig(fig, path)


def plot_trace(trace, path):
    """Lagrangian and its terms against the global inner-step count."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(trace))
        for key, style in (("total", "k-"), ("df", "C0--"), ("spm", "C1--"), ("penalty", "C2:"), ("dmr", "C3:")):
            y = np.array([getattr(r, key) for r in trace])
            if np.any(y > 0):
                ax.semilogy(x, np.where(y > 0, y, np.nan), style, lw=1.2, label=key)
        starts = [i for i, r in enumerate(trace) if r.inner_step == 0]
        for s in starts[1:]:
            ax.axvline(s, color="0.6", lw=0.6)
        ax.set_xlabel("inner step (all outer iterations)")
        ax.set_ylabel("Lagrangian")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        savefig(fig, path)


def plot_band_metrics(wavelengths, reports, labels, path):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.4))
        for rep, lab in zip(reports, labels):
            x = wavelengths if wavelengths is not None else np.arange(1, len(rep.psnr_bands) + 1)
            finite = np.where(np.isfinite(rep.psnr_bands), rep.psnr_bands, np.nan)
            a1.plot(x, finite, lw=1, label=lab)
            a2.plot(x, rep.rmse_bands, lw=1)
        a1.set_ylabel("PSNR (dB)")
        a2.set_ylabel("RMSE")
        a2.set_xlabel("wavelength (nm)" if wavelengths is not None else "band")
        if len(labels) <= 8:
            a1.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        savefig(fig, path)


def plot_loss_trace(trace, path):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.0))
        a1.plot(trace.step, trace.loss, color="0.6", lw=0.8, label="L_D")
        a1.plot(trace.step, trace.smoothed(), color="k", lw=1.2, label="smoothed")
        a1.set_ylabel("discriminator loss")
        a1.legend(frameon=False, fontsize=7)
        a2.plot(trace.step, trace.p_r, color="C0", lw=1, label="p_r")
        a2.plot(trace.step, trace.p_f, color="C3", lw=1, label="p_f")
        a2.set_xlabel("step")
        a2.set_ylabel("mean probability")
        a2.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        savefig(fig, path)


def plot_srf(D, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = D.wavelengths if D.wavelengths is not None else np.arange(D.shape[1])
        for k, row in enumerate(D.values):
            ax.step(x, row, where="mid", lw=1, label=str(k + 1))
        ax.set_xlabel("wavelength (nm)" if D.wavelengths is not None else "band")
        ax.set_ylabel("weight")
        ax.legend(frameon=False, fontsize=6, ncol=4)
        fig.tight_layout()
        savefig(fig, path)


def plot_prior(P, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.4))
        im = ax.imshow(P.values, cmap="viridis", interpolation="nearest")
        ax.grid(False)
        ax.set_xlabel("band")
        ax.set_ylabel("band")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        savefig(fig, path)
