import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_toml(path: str | Path | None = None, *, text: str | None = None) -> dict:
    if text is None:
        text = Path(path).read_text()
    return tomllib.loads(text)
