# ccr/utils/file_readers.py
from __future__ import annotations

import io
import logging
import os
from typing import Iterable

import chardet
import pandas as pd

from ccr.errors import DataValidationError

logger = logging.getLogger(__name__)

ZIP_SIGNATURE = b"PK\x03\x04"  # .xlsx container
NUMERIC_COLUMNS = ("n_claims", "year", "deductible", "limit", "amount", "at_limit")
INFINITE_TOKENS = {"", "inf", "+inf", "infinity", "none", "nan"}


def sniff_encoding(raw: bytes) -> str:
    enc = chardet.detect(raw or b"").get("encoding") or "utf-8"
    if enc.lower() not in ("utf-8", "ascii", "utf-8-sig"):
        logger.warning(f"⚠️ input encoded as {enc}; UTF-8 expected")
    return "utf-8-sig" if raw.startswith(b"\xef\xbb\xbf") else enc


def _to_numeric(frame: pd.DataFrame, columns: Iterable[str], path: str) -> pd.DataFrame:
    for col in columns:
        if col not in frame.columns:
            continue
        text = frame[col].astype(str).str.strip()
        if col == "limit":
            text = text.where(~text.str.lower().isin(INFINITE_TOKENS), "inf")
        values = pd.to_numeric(text, errors="coerce")
        bad = values.isna() & (text.str.lower() != "nan")
        if bad.any():
            rows = (frame.index[bad] + 2).tolist()[:10]
            raise DataValidationError(
                f"{os.path.basename(path)}: non-numeric '{col}' values on lines {rows}"
            )
        frame[col] = values
    return frame


def read_table(path: str, covariates_numeric: bool = True) -> pd.DataFrame:
    """
    Read a policy or claims table. Workbooks are recognised by signature, text
    files by sniffed encoding. Ids stay strings; monetary and count fields are
    parsed from their text form.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataValidationError(f"cannot read {path}: {e}") from e

    if raw.startswith(ZIP_SIGNATURE):
        frame = pd.read_excel(path, engine="openpyxl", dtype=str)
    else:
        text = raw.decode(sniff_encoding(raw), errors="replace")
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    frame.columns = [str(c).strip() for c in frame.columns]
    if "policy_id" not in frame.columns:
        raise DataValidationError(f"{os.path.basename(path)}: missing 'policy_id' column")
    frame["policy_id"] = frame["policy_id"].astype(str).str.strip()

    numeric = list(NUMERIC_COLUMNS)
    if covariates_numeric:
        numeric += [c for c in frame.columns if c not in NUMERIC_COLUMNS and c != "policy_id"]
    frame = _to_numeric(frame, numeric, path)
    logger.info(f"📋 Loaded {len(frame)} rows with {len(frame.columns)} columns from {os.path.basename(path)}")
    return frame
