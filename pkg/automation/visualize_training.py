import pandas as pd
import matplotlib.pyplot as plt
import seaborn as sns
import sys
import os

sns.set(style="whitegrid")


def load_log(run_folder):
    log_path = os.path.join(run_folder, "train_log.csv")
    df = pd.read_csv(log_path)
    return df


def plot_training(df, output_image, title):
    plt.figure(figsize=(15, 5))

    plt.subplot(1, 3, 1)
    sns.lineplot(data=df, x="epoch", y="loss", label="masked L1")
    plt.title("Train loss")

    plt.subplot(1, 3, 2)
    scores = df.melt(id_vars="epoch", value_vars=["dr", "ra", "fm"], var_name="metric", value_name="value")
    sns.lineplot(data=scores, x="epoch", y="value", hue="metric")
    plt.ylim(0, 1.05)
    plt.title("Validation DR / RA / FM")

    plt.subplot(1, 3, 3)
    sns.lineplot(data=df, x="epoch", y="lr", drawstyle="steps-post")
    plt.yscale("log")
    plt.title("Learning rate")

    plt.suptitle(title, fontsize=16)
    plt.tight_layout(rect=[0, 0.03, 1, 0.95])
    plt.savefig(output_image)
    plt.close()


# Run folders to plot, relative to the repository root
runs_folder = os.path.join(os.path.dirname(__file__), "../runs")
run_names = sys.argv[1:] or ["train"]

# Define the "viz/" directory path relative to the automation script
viz_folder = os.path.join(os.path.dirname(__file__), "../viz")
os.makedirs(viz_folder, exist_ok=True)

for run_name in run_names:
    run_folder = os.path.join(runs_folder, run_name)
    df = load_log(run_folder)
    output_image = os.path.join(viz_folder, f"{run_name.replace(os.sep, '_')}_training.png")
    best = df.loc[df["fm"].idxmax()]
    plot_training(df, output_image, f"{run_name} (best FM {best['fm']:.3f} at epoch {int(best['epoch'])})")
    print(f"Visualization saved for {run_name} to {output_image}")
