import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from tacvi.metrics import METRICS  # noqa: E402

_LABELS = {"ap": "AP", "one_minus_hl": "1-HL", "one_minus_rl": "1-RL", "auc": "AUC"}


def loss_curves(records, path):
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for i, r in enumerate(records):
        for view, curve in r.stage1_losses.items():
            axes[0].plot(range(1, len(curve) + 1), curve, lw=0.8,
                         label=f"view {view}" if i == 0 else None)
        ep = range(1, len(r.stage2_losses) + 1)
        axes[1].plot(ep, [t["L_c"] for t in r.stage2_losses], color="C0", lw=0.8)
        axes[1].plot(ep, [t["L_re"] for t in r.stage2_losses], color="C1", lw=0.8)
        axes[2].plot(ep, [v["ap"] for v in r.val_metrics], color="C2", lw=0.8)
    axes[0].set_title("stage 1 loss")
    axes[1].set_title("stage 2: L_c (blue), L_re (orange)")
    axes[2].set_title("validation AP")
    if records and records[0].stage1_losses:
        axes[0].legend(fontsize=7)
    for ax in axes:
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def trend(rows, axis, out_dir):
    for metric in METRICS:
        pts = [r for r in rows if r["metric"] == metric]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.errorbar([str(p["value"]) for p in pts], [p["mean"] for p in pts],
                    yerr=[p["std"] for p in pts], marker="o", capsize=3)
        ax.set_xlabel(axis)
        ax.set_ylabel(_LABELS[metric])
        fig.tight_layout()
        fig.savefig(out_dir / f"trend_{metric}.png", dpi=100)
        plt.close(fig)
