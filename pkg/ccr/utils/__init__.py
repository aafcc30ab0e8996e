# ccr/utils/__init__.py
from ccr.utils.file_readers import read_table, sniff_encoding
from ccr.utils.file_writers import write_csv, write_json

__all__ = ["read_table", "sniff_encoding", "write_csv", "write_json"]
