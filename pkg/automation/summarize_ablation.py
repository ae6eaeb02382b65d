import pandas as pd
import sys
import os

# Ablation output folder, relative to the repository root
ablation_folder = os.path.join(os.path.dirname(__file__), "..", sys.argv[1] if len(sys.argv) > 1 else "runs/ablate")
df = pd.read_csv(os.path.join(ablation_folder, "ablation.csv"))
df["error"] = df["error"].fillna("")


def topology_table(df):
    # 8 rows: counter order x H bidirectional x V bidirectional, no monotone enforcement
    rows = df[df["name"].str.match(r"^[hv]first_")].copy()
    rows["H"] = rows["h_bidirectional"].map({True: "↔", False: "→"})
    rows["V"] = rows["v_bidirectional"].map({True: "↕", False: "↓"})
    rows["order"] = rows["counter_order"].map({"horizontal_first": "H then V", "vertical_first": "V then H"})
    return rows[["order", "H", "V", "dr", "ra", "fm", "error"]].sort_values(["order", "H", "V"])


def monotone_table(df):
    # pre-activation rows x placement columns, plus the no-cumsum baseline
    rows = df[(df["name"] == "baseline") | df["name"].str.match(r"^(before|after)_")].copy()
    rows.loc[rows["name"] == "baseline", "preactivation"] = "baseline"
    return rows.pivot_table(index="preactivation", columns="placement", values="fm", aggfunc="first")


# Write both tables next to the ablation results
summary_path = os.path.join(ablation_folder, "ablation_summary.txt")
with open(summary_path, "w") as f:
    topology = topology_table(df)
    if not topology.empty:
        f.write("Counter topology (FM)\n")
        f.write(topology.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
        f.write("\n\n")
    monotone = monotone_table(df)
    if not monotone.empty:
        f.write("Monotone enforcement (FM)\n")
        f.write(monotone.to_string(float_format=lambda v: f"{v:.3f}"))
        f.write("\n")

print(open(summary_path).read())
print(f"Summary saved to {summary_path}")
