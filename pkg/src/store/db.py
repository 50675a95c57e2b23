# src/store/db.py — SQLite registry of cached spectra and command runs
import os, sqlite3

from dotenv import load_dotenv

load_dotenv()

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "schema.sql")


def db_path() -> str:
    return os.getenv("ROTORS_DB_PATH", os.path.join("data", "sqlite", "rotors.db"))


def get_conn(path: str = None):
    path = path or db_path()
    if path != ":memory:":
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return sqlite3.connect(path, check_same_thread=False)


def init_db(conn=None):
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        ddl = f.read()
    if conn is not None:
        conn.executescript(ddl)
        return conn
    with get_conn() as c:
        c.executescript(ddl)


def execute(conn, sql, params=()):
    cur = conn.cursor()
    cur.execute(sql, params)
    conn.commit()
    return cur


def query(conn, sql, params=()):
    cur = conn.cursor()
    cur.execute(sql, params)
    rows = cur.fetchall()
    cols = [d[0] for d in cur.description] if cur.description else []
    return [dict(zip(cols, r)) for r in rows]
