# app.py — Rotors dashboard (registry · runs · output tables)
# ---------------------------------------------------------------
from __future__ import annotations
import json
import os
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import streamlit as st
from dotenv import load_dotenv

# ==== project modules ====
from src.errors import RotorsError
from src.service.commands import Workspace, cmd_spectrum
from src.service.config import Settings, load_config
from src.service.io import read_header
from src.service.runs import list_runs, list_spectra

# ========= bootstrap =========
load_dotenv()  # 读取本地 .env（ROTORS_OUTPUT_DIR / ROTORS_DB_PATH / ROTORS_CACHE_DIR）

st.set_page_config(page_title="Rotors · single Bohm trajectory", layout="wide")


@st.cache_resource(show_spinner=False)
def _open_workspace() -> Workspace:
    return Workspace.open(Settings.from_env())


ws = _open_workspace()
conn = ws.conn

# ---------------------------------------------------------------------
# Sidebar
# ---------------------------------------------------------------------
st.sidebar.title("Settings")
st.sidebar.caption(f"Registry: {ws.settings.db_path}")
st.sidebar.caption(f"Cache: {ws.settings.cache_dir}")
out_root = st.sidebar.text_input("Output root", value=ws.settings.output_dir)

tab_spec, tab_runs, tab_out = st.tabs(["🧮 Spectra", "🏃 Runs", "📄 Outputs"])

# ---------------------------------------------------------------------
# 🧮 Spectra
# ---------------------------------------------------------------------
with tab_spec:
    st.subheader("Cached spectra")
    rows = list_spectra(conn)
    if rows:
        st.dataframe(rows, use_container_width=True, hide_index=True)
    else:
        st.info("No cached spectra yet. Build one below or with `python cli.py spectrum`.")

    cfg_path = st.text_input("Config file (key=value or .json; empty = defaults)", "")
    if st.button("Build spectrum"):
        try:
            with st.spinner("Diagonalizing…"):
                summary = cmd_spectrum(load_config(cfg_path or None), ws)
            st.success(f"Spectrum ready: {summary['dimension']} states, E0={summary['ground_energy']:.4f}")
            st.rerun()
        except RotorsError as e:
            st.error(f"{type(e).__name__}: {e}")

# ---------------------------------------------------------------------
# 🏃 Runs
# ---------------------------------------------------------------------
with tab_runs:
    st.subheader("Command runs")
    if st.button("Refresh list"):
        st.rerun()
    runs = list_runs(conn)
    if not runs:
        st.info("No runs recorded yet.")
    else:
        st.dataframe([{k: v for k, v in r.items() if k != "summary"} for r in runs],
                     use_container_width=True, hide_index=True)
        pick = st.selectbox("Run summary", [r["id"] for r in runs])
        chosen = next(r for r in runs if r["id"] == pick)
        if chosen.get("summary"):
            st.json(json.loads(chosen["summary"]))


# ---------------------------------------------------------------------
# 📄 Outputs
# ---------------------------------------------------------------------
def _output_dirs(root: str) -> List[Path]:
    p = Path(root)
    if not p.is_dir():
        return []
    return sorted({f.parent for f in p.rglob("*") if f.suffix in (".csv", ".json")})


def _csv_table(path: Path, limit: int = 2000) -> Dict[str, Any]:
    header = read_header(str(path))
    cols = header.get("columns", "").split(",")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return {"header": header, "rows": [dict(zip(cols, r)) for r in data[:limit].tolist()], "total": len(data)}


with tab_out:
    st.subheader("Output files")
    dirs = _output_dirs(out_root)
    if not dirs:
        st.info(f"No outputs under {out_root}.")
    else:
        folder = st.selectbox("Directory", dirs, format_func=lambda d: os.path.relpath(d, out_root))
        files = sorted(f for f in folder.iterdir() if f.suffix in (".csv", ".json"))
        name = st.selectbox("File", files, format_func=lambda f: f.name)
        if name.suffix == ".json":
            st.json(json.loads(name.read_text(encoding="utf-8")))
        else:
            table = _csv_table(name)
            st.caption(f"config_hash={table['header'].get('config_hash')} · {table['header'].get('units', '')}")
            st.caption(f"{table['total']} rows (showing up to 2000)")
            st.dataframe(table["rows"], use_container_width=True, hide_index=True)
