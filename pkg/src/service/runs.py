# src/service/runs.py — registry helpers over the spectra / runs tables
from __future__ import annotations

import json
from typing import Any, Dict, List, Optional

from ..store.db import execute as sql_execute, query as sql_query


# --- spectra ---
def register_spectrum(conn, key: str, path: str, meta: Dict[str, Any],
                      build_seconds: Optional[float] = None) -> None:
    sql_execute(conn, """
        INSERT OR REPLACE INTO spectra(key, path, n, u, j_max, levels, e_tr, dimension, min_gap, build_seconds, created_at)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, datetime('now'))
    """, (key, path, int(meta["n"]), float(meta["u"]), int(meta["j_max"]), int(meta["levels"]),
          meta.get("E_tr"), int(meta["dimension"]), meta.get("min_gap"), build_seconds))


def find_spectrum(conn, key: str) -> Optional[Dict[str, Any]]:
    rows = sql_query(conn, "SELECT * FROM spectra WHERE key=?", (key,))
    return rows[0] if rows else None


def list_spectra(conn) -> List[Dict[str, Any]]:
    return sql_query(conn, "SELECT * FROM spectra ORDER BY created_at DESC")


# --- runs ---
def record_run(conn, command: str, config_hash: str, output_dir: str) -> int:
    cur = conn.cursor()
    cur.execute("INSERT INTO runs(command, config_hash, output_dir, status, created_at) "
                "VALUES (?, ?, ?, 'running', datetime('now'))", (command, config_hash, output_dir))
    conn.commit()
    return int(cur.lastrowid)


def update_run_status(conn, run_id: int, status: str, runtime_seconds: Optional[float] = None,
                      summary: Optional[Dict[str, Any]] = None) -> None:
    # summary 以 JSON 文本存储
    text = None if summary is None else json.dumps(summary, sort_keys=True, default=str)
    sql_execute(conn, "UPDATE runs SET status=?, runtime_seconds=?, summary=COALESCE(?, summary), "
                      "updated_at=datetime('now') WHERE id=?", (status, runtime_seconds, text, run_id))


def list_runs(conn, config_hash: Optional[str] = None) -> List[Dict[str, Any]]:
    if config_hash:
        return sql_query(conn, "SELECT * FROM runs WHERE config_hash=? ORDER BY id DESC", (config_hash,))
    return sql_query(conn, "SELECT * FROM runs ORDER BY id DESC")
