import subprocess
import sys
import os

# Repository root, where main.py lives
repo_folder = os.path.join(os.path.dirname(__file__), "..")
data_folder = os.path.join(repo_folder, "data")
runs_folder = os.path.join(repo_folder, "runs")

epochs = sys.argv[1] if len(sys.argv) > 1 else "300"

# Desk-scale reference run: 250 training pages, 50 test pages, train, then score
steps = [
    ["synth", "--count", "250", "--seed", "0", "--out", os.path.join(data_folder, "train")],
    ["synth", "--count", "50", "--seed", "1", "--out", os.path.join(data_folder, "test")],
    [
        "train",
        "--manifest", os.path.join(data_folder, "train", "manifest.json"),
        "--epochs", epochs,
        "--out", os.path.join(runs_folder, "train"),
    ],
    [
        "eval",
        "--manifest", os.path.join(data_folder, "test", "manifest.json"),
        "--checkpoint", os.path.join(runs_folder, "train", "best.lcnt"),
        "--out", os.path.join(runs_folder, "eval"),
    ],
]


# Function to print a nicely formatted header/footer for each step
def print_separator(message):
    print(f"\n{'='*20} {message} {'='*20}\n")


# Execute each step one by one
for step in steps:
    print_separator(f"Starting {step[0]}")

    try:
        subprocess.run([sys.executable, os.path.join(repo_folder, "main.py"), *step], check=True)
        print_separator(f"Successfully completed {step[0]}")
    except subprocess.CalledProcessError as e:
        print_separator(f"Failed to complete {step[0]}. Error: {e}")
        break  # Stop execution if any step fails
