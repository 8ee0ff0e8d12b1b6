import os
import sys

import matplotlib
import matplotlib.pyplot as plt
import matplotlib.ticker as mtick
import pandas as pd
import seaborn as sns
from matplotlib.backends.backend_pdf import PdfPages


def read_result(out_dir, name):
    path = os.path.join(out_dir, name)

    if not os.path.exists(path):
        return None

    # First line is the provenance header
    return pd.read_csv(path, comment="#")


def plot_tradeoff(df, title):
    fig, ax1 = plt.subplots(figsize=(5, 3.5))
    ax2 = ax1.twinx()

    ax1.plot(df["sigma"], df["attack_accuracy"], marker="o", color="firebrick", label="Attack accuracy")
    ax2.plot(df["sigma"], df["utility_loss"], marker="s", color="steelblue", label="Utility loss")
    ax1.axhline(0.5, color="grey", ls="--", lw=0.8)

    ax1.set_xscale("symlog", linthresh=0.01)
    ax1.yaxis.set_major_formatter(mtick.PercentFormatter(1.0))
    ax1.set_xlabel("Noise std (sigma)")
    ax1.set_ylabel("Attack Accuracy")
    ax2.set_ylabel("Utility Loss")
    ax1.set_title(title)

    handles = ax1.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
    ax1.legend(handles, [h.get_label() for h in handles], loc="upper right")
    ax1.grid()
    fig.set_tight_layout(True)


def plot_regularization(df):
    fig, ax = plt.subplots(figsize=(5, 3.5))

    ax.plot(df["lambda"], df["attack_accuracy"], marker="o", label="Attack accuracy")
    ax.plot(df["lambda"], df["val_acc"], marker="s", label="Validation accuracy")
    ax.plot(df["lambda"], df["train_acc"], marker="^", label="Training accuracy")

    ax.set_xscale("symlog", linthresh=1e-4)
    ax.yaxis.set_major_formatter(mtick.PercentFormatter(1.0))
    ax.set_xlabel("l2 coefficient (lambda)")
    ax.legend()
    ax.grid()
    fig.set_tight_layout(True)


def plot_scatter(df):
    fig = plt.figure(figsize=(4.7, 4))
    df = df.assign(inferred=df["inferred"].map({True: "member", False: "non-member"}))

    ax = sns.scatterplot(data=df, x="entropy", y="loss", hue="inferred", style="member", s=18, alpha=0.7)
    ax.set_yscale("log")
    ax.set_xlabel("Prediction Entropy")
    ax.set_ylabel("Cross-Entropy Loss")
    ax.grid()
    fig.set_tight_layout(True)


def plot_memorization(df):
    fig = plt.figure(figsize=(4.7, 3.3))

    ax = df.plot.bar(x="batch", y="attack_accuracy", legend=False, ax=fig.gca())
    ax.axhline(0.5, color="grey", ls="--", lw=0.8)
    ax.set_ylim(0, 1)
    ax.yaxis.set_major_formatter(mtick.PercentFormatter(1.0))
    ax.set_xlabel("Training Batch")
    ax.set_ylabel("Attack Accuracy")
    ax.set_axisbelow(True)
    ax.grid()
    fig.set_tight_layout(True)


if __name__ == "__main__":
    matplotlib.use('Agg')
    matplotlib.rc('font', family='DejaVu Sans', stretch="condensed")

    # python3 plot.py /path/to/privaudit-out tradeoff.pdf
    out_dir, out_pdf_path = sys.argv[1:]

    with PdfPages(out_pdf_path) as pdf_backend:
        if (df := read_result(out_dir, "sweep_dpsgd.csv")) is not None:
            plot_tradeoff(df, "DP-SGD")
            pdf_backend.savefig()

        if (df := read_result(out_dir, "sweep_gpm.csv")) is not None:
            plot_tradeoff(df, "GPM")
            pdf_backend.savefig()

        if (df := read_result(out_dir, "sweep_l2.csv")) is not None:
            plot_regularization(df)
            pdf_backend.savefig()

        if (df := read_result(out_dir, "scatter.csv")) is not None:
            plot_scatter(df)
            pdf_backend.savefig()

        if (df := read_result(out_dir, "memorization.csv")) is not None:
            plot_memorization(df)
            pdf_backend.savefig()
