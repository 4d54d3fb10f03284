"""
Reference documentation for the CLI `help` command.

Content lives in HELP/<tool>.json (sections with id/title/content/tags/priority,
plus optional faqs) so the command help stays short and details load on demand.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional

HELP_DIR = Path(__file__).resolve().parents[2] / "HELP"


def load_help(tool: str = "gpstruct") -> Dict:
    help_file = HELP_DIR / f"{tool}.json"
    if not help_file.exists():
        raise FileNotFoundError(f"Help file not found: {help_file}")
    with open(help_file, encoding="utf-8") as f:
        return json.load(f)


def get_section(help_data: Dict, section_id: str) -> Optional[Dict]:
    return next((s for s in help_data.get("sections", []) if s["id"] == section_id), None)


def format_section(section: Dict) -> str:
    lines = ["=" * 80, section["title"].upper(), "=" * 80, "", section["content"], ""]
    if section.get("tags"):
        lines.append(f"Tags: {', '.join(section['tags'])}")
    return "\n".join(lines)


def format_help(help_data: Dict) -> str:
    lines = [
        "=" * 80,
        f"{help_data['tool'].upper()} - REFERENCE DOCUMENTATION (v{help_data['version']})",
        "=" * 80,
        "",
        help_data["description"],
        "",
    ]
    for section in sorted(help_data.get("sections", []), key=lambda s: s.get("priority", 3)):
        lines.extend(["-" * 80, section["title"].upper(), "-" * 80, "", section["content"], ""])
    for faq in help_data.get("faqs", []):
        lines.extend([f"Q: {faq['question']}", f"A: {faq['answer']}", ""])
    return "\n".join(lines)


def search_help(help_data: Dict, query: str) -> List[Dict]:
    """Sections and FAQs whose text contains query (case-insensitive)."""
    query = query.lower()
    hits = [
        s for s in help_data.get("sections", [])
        if query in s["title"].lower() or query in s["content"].lower()
        or any(query in tag for tag in s.get("tags", []))
    ]
    hits += [
        {"id": "faq", "title": faq["question"], "content": faq["answer"]}
        for faq in help_data.get("faqs", [])
        if query in faq["question"].lower() or query in faq["answer"].lower()
    ]
    return hits
