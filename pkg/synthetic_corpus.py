"""
Synthetic author fixtures with well-separated, task-invariant styles.

Every author gets a unique combination of layout habits (indent width,
brace placement, comment density, blank lines) and identifier length.
Tasks only change fixed-width numeric literals, so two samples by the same
author have identical style features while any two authors differ in at
least one feature.
"""

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Tuple

from corpus_engine import CodeSample, Corpus, PairingRow

INDENT_WIDTHS = (2, 3, 4, 5, 6, 8)
NAME_LENGTHS = tuple(range(2, 12))
BRACE_STYLES = (True, False)
COMMENT_DENSITIES = (0, 1, 2)
BLANK_DENSITIES = (0, 1)

MAX_AUTHORS = (
    len(INDENT_WIDTHS) * len(NAME_LENGTHS) * len(BRACE_STYLES)
    * len(COMMENT_DENSITIES) * len(BLANK_DENSITIES)
)
MAX_TASKS = 100  # keeps every numeric literal at three digits

EXTENSIONS = {"cpp": ".cpp", "java": ".java"}
COMMENT_TEXT = "// next step"


@dataclass(frozen=True)
class SyntheticStyle:
    indent: int
    name_length: int
    brace_same_line: bool
    comment_lines: int
    blank_lines: int


def style_for(index: int) -> SyntheticStyle:
    """Mixed-radix decode; indent width varies fastest"""
    if not 0 <= index < MAX_AUTHORS:
        raise ValueError(f"❌ Synthetic author index must be in [0, {MAX_AUTHORS}), got {index}")
    index, indent = divmod(index, len(INDENT_WIDTHS))
    index, name = divmod(index, len(NAME_LENGTHS))
    index, brace = divmod(index, len(BRACE_STYLES))
    blank, comment = divmod(index, len(COMMENT_DENSITIES))
    return SyntheticStyle(
        indent=INDENT_WIDTHS[indent],
        name_length=NAME_LENGTHS[name],
        brace_same_line=BRACE_STYLES[brace],
        comment_lines=COMMENT_DENSITIES[comment],
        blank_lines=BLANK_DENSITIES[blank],
    )


def author_id(index: int) -> str:
    return f"author{index:03d}"


def task_id(task: int) -> str:
    return f"task{task:03d}"


# -----------------------------------------------------------
# PROGRAM RENDERING
# -----------------------------------------------------------
def _program(task: int, style: SyntheticStyle, language: str):
    n, a, i, s = (ch * style.name_length for ch in "nais")
    size, mul, mod = 100 + task, 300 + task, 700 + task

    fill = ("block", f"for (int {i} = 0; {i} < {n}; {i}++)", [
        ("line", f"{a}[{i}] = {i} * {mul} % {mod};"),
    ])
    accumulate = ("block", f"for (int {i} = 0; {i} < {n}; {i}++)", [
        ("block", f"if ({a}[{i}] % 2 == 0)", [
            ("line", f"{s} += {a}[{i}];"),
        ]),
    ])

    if language == "java":
        body = [
            ("line", f"int {n} = {size};"),
            ("line", f"int[] {a} = new int[{n}];"),
            fill,
            ("blank",),
            ("line", f"long {s} = 0;"),
            accumulate,
            ("blank",),
            ("line", f"System.out.println({s});"),
        ]
        return [
            ("line", "import java.util.Scanner;"),
            ("blank",),
            ("block", "public class Main", [
                ("block", "public static void main(String[] args)", body),
            ]),
        ]

    body = [
        ("line", f"int {n} = {size};"),
        ("line", f"vector<int> {a}({n});"),
        fill,
        ("blank",),
        ("line", f"long long {s} = 0;"),
        accumulate,
        ("blank",),
        ("line", f"cout << {s} << endl;"),
        ("line", "return 0;"),
    ]
    return [
        ("line", "#include <iostream>"),
        ("line", "#include <vector>"),
        ("line", "using namespace std;"),
        ("blank",),
        ("block", "int main()", body),
    ]


def _emit(nodes, style: SyntheticStyle, depth: int, out: List[str]):
    pad = " " * (style.indent * depth)
    for node in nodes:
        if node[0] == "line":
            out.append(pad + node[1])
        elif node[0] == "blank":
            out.extend([""] * style.blank_lines)
        else:
            _, header, children = node
            if style.brace_same_line:
                out.append(f"{pad}{header} {{")
            else:
                out.append(pad + header)
                out.append(pad + "{")
            inner = " " * (style.indent * (depth + 1))
            out.extend(inner + COMMENT_TEXT for _ in range(style.comment_lines))
            _emit(children, style, depth + 1, out)
            out.append(pad + "}")


def render_program(task: int, style: SyntheticStyle, language: str = "cpp") -> str:
    if not 0 <= task < MAX_TASKS:
        raise ValueError(f"❌ Synthetic task index must be in [0, {MAX_TASKS}), got {task}")
    lines: List[str] = []
    _emit(_program(task, style, language), style, 0, lines)
    return "\n".join(lines) + "\n"


# -----------------------------------------------------------
# CORPORA
# -----------------------------------------------------------
def generate_corpus(n_authors: int, tasks_per_author: int, language: str = "cpp") -> Corpus:
    if tasks_per_author > MAX_TASKS:
        raise ValueError(f"❌ At most {MAX_TASKS} tasks per author")
    ext = EXTENSIONS.get(language, f".{language}")
    samples = []
    for index in range(n_authors):
        style = style_for(index)
        author = author_id(index)
        for task in range(tasks_per_author):
            samples.append(CodeSample(
                author=author,
                task=task_id(task),
                language=language,
                text=render_program(task, style, language),
                path=f"{author}/{task_id(task)}{ext}",
            ))
    return Corpus(tuple(samples))


def generate_adversarial_fixture(
    n_pairs: int, tasks_per_author: int, language: str = "cpp"
) -> Tuple[Corpus, Corpus, List[PairingRow]]:
    """
    n_pairs evasion and n_pairs imitation rows over authors 2j and 2j + 7,
    which differ in both indent width and identifier length. The restyled
    copy takes the other author's indent width and keeps everything else.
    """
    if tasks_per_author + 1 > MAX_TASKS:
        raise ValueError(f"❌ At most {MAX_TASKS - 1} tasks per author")
    originals = generate_corpus(2 * n_pairs + 6, tasks_per_author, language)
    unseen_task = tasks_per_author
    ext = EXTENSIONS.get(language, f".{language}")

    transformed: List[CodeSample] = []
    rows: List[PairingRow] = []
    for j in range(n_pairs):
        first, second = 2 * j, 2 * j + 7
        for setting, source, target in (("evasion", first, second), ("imitation", second, first)):
            restyled = replace(style_for(source), indent=style_for(target).indent)
            path = f"{setting}/{author_id(source)}-as-{author_id(target)}{ext}"
            transformed.append(CodeSample(
                author=author_id(source),
                task=task_id(unseen_task),
                language=language,
                text=render_program(unseen_task, restyled, language),
                path=path,
            ))
            rows.append(PairingRow(path, author_id(source), author_id(target), setting))

    return originals, Corpus(tuple(transformed)), rows


# -----------------------------------------------------------
# WRITERS
# -----------------------------------------------------------
def write_author_dirs(corpus: Corpus, root) -> Path:
    root = Path(root)
    for sample in corpus.samples:
        target = root / sample.path
        os.makedirs(target.parent, exist_ok=True)
        target.write_text(sample.text, encoding="utf-8")
    return root


def write_manifest(corpus: Corpus, root) -> Path:
    """Write samples plus manifest.json; returns the manifest path"""
    root = Path(root)
    write_author_dirs(corpus, root)
    manifest = root / "manifest.json"
    rows = [
        {"author": s.author, "task": s.task, "path": s.path, "language": s.language}
        for s in corpus.samples
    ]
    manifest.write_text(json.dumps(rows, indent=4), encoding="utf-8")
    return manifest


def write_pairing(rows: List[PairingRow], path) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    payload = [
        {
            "transformed_path": r.transformed_path,
            "source_author": r.source_author,
            "imitated_author": r.imitated_author,
            "setting": r.setting,
        }
        for r in rows
    ]
    path.write_text(json.dumps(payload, indent=4), encoding="utf-8")
    return path
