"""Safe command/script templating for scheduler integration.

Templates use ``{name}`` placeholders; ``{{`` and ``}}`` escape literal
braces. Substituted values must pass a conservative whitelist so that no
value can introduce a new shell token, quote, or newline into a rendered
command. Administrator-marked "raw" parameters bypass the whitelist; they may
only ever be populated from the config file, never from request data.
"""

from __future__ import annotations

import re
from typing import Iterable, Mapping

VALUE_RE = re.compile(r"^[A-Za-z0-9._:=/@-]+$")
PLACEHOLDER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


class TemplateError(Exception):
    """Base class for rendering failures."""


class MissingVariable(TemplateError):
    def __init__(self, name: str) -> None:
        super().__init__(f"template references undefined variable {name!r}")
        self.name = name


class InjectionRejected(TemplateError):
    def __init__(self, name: str, value: str) -> None:
        super().__init__(f"value for {name!r} failed the whitelist: {value!r}")
        self.name = name
        self.value = value


class UnknownPlaceholderEscape(TemplateError):
    def __init__(self, detail: str) -> None:
        super().__init__(detail)


def parse_template(template: str) -> list[tuple[str, str]]:
    """Split a template into ("lit", text) and ("var", name) segments.

    Raises UnknownPlaceholderEscape on stray braces, unterminated
    placeholders, or placeholder names outside the identifier grammar.
    """
    segments: list[tuple[str, str]] = []
    i = 0
    n = len(template)
    literal: list[str] = []
    while i < n:
        ch = template[i]
        if ch == "{":
            if i + 1 < n and template[i + 1] == "{":
                literal.append("{")
                i += 2
                continue
            end = template.find("}", i + 1)
            if end == -1:
                raise UnknownPlaceholderEscape(f"unterminated placeholder at offset {i}")
            name = template[i + 1 : end]
            if not PLACEHOLDER_RE.fullmatch(name):
                raise UnknownPlaceholderEscape(f"malformed placeholder {{{name}}}")
            if literal:
                segments.append(("lit", "".join(literal)))
                literal = []
            segments.append(("var", name))
            i = end + 1
        elif ch == "}":
            if i + 1 < n and template[i + 1] == "}":
                literal.append("}")
                i += 2
                continue
            raise UnknownPlaceholderEscape(f"single '}}' at offset {i}")
        else:
            literal.append(ch)
            i += 1
    if literal:
        segments.append(("lit", "".join(literal)))
    return segments


def placeholders(template: str) -> set[str]:
    """Names of all placeholders appearing in the template."""
    return {name for kind, name in parse_template(template) if kind == "var"}


def render_template(
    template: str,
    variables: Mapping[str, object],
    raw_names: Iterable[str] = (),
) -> str:
    """Render a template, whitelisting every non-raw substituted value.

    Values are stringified first (profiles carry scalars). A non-raw value
    that fails ``VALUE_RE`` raises InjectionRejected; a placeholder with no
    value raises MissingVariable.
    """
    raw = frozenset(raw_names)
    out: list[str] = []
    for kind, text in parse_template(template):
        if kind == "lit":
            out.append(text)
            continue
        if text not in variables:
            raise MissingVariable(text)
        value = str(variables[text])
        if text not in raw and not VALUE_RE.fullmatch(value):
            raise InjectionRejected(text, value)
        out.append(value)
    return "".join(out)
