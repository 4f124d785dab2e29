from __future__ import annotations
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import pandas as pd

logger = logging.getLogger(__name__)


def generate_readme(title: str, meta: Mapping[str, Any], sheets: Mapping[str, pd.DataFrame]) -> str:
    lines = [
        title.upper(),
        "=" * 50,
        "",
        "RUN SUMMARY",
        "-" * 20,
    ]
    for k, v in meta.items():
        lines.append(f"• {k}: {v}")
    lines += ["", "SHEETS", "-" * 20]
    for name, df in sheets.items():
        lines.append(f"• {name}: {len(df)} rows × {len(df.columns)} cols")
    return "\n".join(lines)


def _sheet_name(name: str) -> str:
    return re.sub(r"[\[\]:*?/\\]", " ", name)[:31]


def create_excel_report(output_path: "str | Path", sheets: Mapping[str, pd.DataFrame], title: str,
                        meta: Mapping[str, Any], index: bool = False) -> None:
    with pd.ExcelWriter(output_path, engine='xlsxwriter') as writer:
        readme_df = pd.DataFrame({'README': [generate_readme(title, meta, sheets)]})
        readme_df.to_excel(writer, sheet_name='README', index=False)
        for name, df in sheets.items():
            df.to_excel(writer, sheet_name=_sheet_name(name), index=index)
        for sheet in writer.sheets.values():
            sheet.set_column('A:Z', 18)


def write_markdown(path: Path, title: str, meta: Mapping[str, Any], df: pd.DataFrame, index: bool = False) -> None:
    header = [f"# {title}", ""] + [f"- {k}: {v}" for k, v in meta.items()] + [""]
    try:
        body = df.to_markdown(index=index, floatfmt=".4f")
    except ImportError:
        logger.warning("tabulate not installed; writing the Markdown table as plain text.")
        body = df.to_string(index=index)
    path.write_text("\n".join(header) + body + "\n", encoding="utf-8")


def write_manifest(out_dir: Path, manifest: Dict[str, Any]) -> None:
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")


def write_report(df: pd.DataFrame, out_dir: "str | Path", stem: str, title: str,
                 meta: Optional[Mapping[str, Any]] = None, excel: bool = True, index: bool = False,
                 extra_sheets: Optional[Mapping[str, pd.DataFrame]] = None) -> Dict[str, str]:
    """
    CSV + Markdown for `df`, an Excel workbook (README sheet first) when xlsxwriter
    is available, and manifest.json listing everything written to out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    written: Dict[str, str] = {}

    csv_path = out / f"{stem}.csv"
    df.to_csv(csv_path, index=index)
    written["csv"] = str(csv_path)
    md_path = out / f"{stem}.md"
    write_markdown(md_path, title, meta, df, index=index)
    written["markdown"] = str(md_path)

    if excel:
        xlsx_path = out / f"{stem}.xlsx"
        sheets = {title: df, **(extra_sheets or {})}
        try:
            create_excel_report(xlsx_path, sheets, title, meta, index=index)
            written["excel"] = str(xlsx_path)
        except Exception as e:
            logger.warning(f"Excel report skipped: {e}")

    manifest_path = out / "manifest.json"
    manifest: Dict[str, Any] = {}
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            manifest = {}
    manifest[stem] = {"title": title, "meta": meta, "outputs": written, "rows": len(df)}
    write_manifest(out, manifest)
    logger.info(f"Report '{stem}' written to: {out}")
    return written
