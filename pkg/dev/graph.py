# Use this to graph the age thresholds written by `aoiprobe solve` (see benchmark.sh)
#
# To run this:
#   - pip install pandas
#   - pip install plotly
#

import glob
import os
import re
import sys

import pandas as pd
import plotly.graph_objects as go

out_dir = sys.argv[1] if len(sys.argv) > 1 else "aoiprobe-out"

for run_dir in sorted(glob.glob(os.path.join(out_dir, "*-solve"))):
    files = sorted(glob.glob(os.path.join(run_dir, "probe_threshold_lam*.csv")))
    if not files:
        continue
    image_path = f"{run_dir}.png"
    print(f"Generating graph from {run_dir}.. image: {image_path}")

    fig = go.Figure()
    for path in files:
        rate = re.search(r"_lam([0-9.e+-]+)\.csv$", path).group(1)
        r = pd.read_csv(path)
        r = r[r["T_th"] != float("inf")]
        fig.add_trace(go.Scatter(name=f"lambda={rate}", x=r["E"], y=r["T_th"], mode="lines+markers"))

    fig.update_layout(title=f"Age threshold, {os.path.basename(run_dir)}")
    fig.update_xaxes(title="Energy E")
    fig.update_yaxes(title="T_th(E)")
    fig.write_image(image_path, scale=2)
