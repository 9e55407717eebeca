"""Deterministic offline completion adapter driven by a keyword vocabulary.

The adapter plays the role of a capable language model over corpora whose
review text uses planted keyword tokens: it proposes variables whose
keywords appear in the sampled reviews, annotates by matching the quoted
keywords in a variable's criterion, and judges confounders by the planted
category tag (external factors are reported as confounders). It is a pure
function of the prompt text.
"""

from __future__ import annotations

import re

from . import prompts
from .types import normalize_name

_SAMPLE_RE = re.compile(r"^- \[rating \d\] (.*)$", re.MULTILINE)
_REVIEW_TEXT_RE = re.compile(r"^text: (.*)$", re.MULTILINE)
_CRITERION_KEYWORDS_RE = re.compile(r'"([^"]+)"')
_REFINED_ITEM_RE = re.compile(r"^- (.+)$", re.MULTILINE)


class KeywordMockLlm:
    model_name = "keyword-mock"

    def __init__(self, vocabulary):
        # entries need .name, .pos_keyword, .neg_keyword, .category
        self.vocabulary = list(vocabulary)
        self._by_name = {normalize_name(v.name): v for v in self.vocabulary}

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        if prompts.ANNOTATION_MARKER in prompt:
            return self._annotate(prompt)
        if prompts.DIRECT_MARKER in prompt:
            return self._direct(prompt)
        if prompts.EXTRACTION_MARKER in prompt:
            return self._extract(prompt)
        if prompts.PROPOSAL_MARKER in prompt:
            return self._propose(prompt)
        raise ValueError("unrecognized prompt kind")

    # -- proposal --------------------------------------------------------------

    def _excluded_names(self, prompt: str) -> set[str]:
        out: set[str] = set()
        for line in prompt.splitlines():
            if line.startswith(prompts.AVOID_MARKER):
                listed = line[len(prompts.AVOID_MARKER):].strip().rstrip(".")
                for name in listed.split(","):
                    out.add(normalize_name(name))
        return out

    def _propose(self, prompt: str) -> str:
        samples = " ".join(_SAMPLE_RE.findall(prompt))
        excluded = self._excluded_names(prompt)
        blocks = []
        for var in self.vocabulary:
            if normalize_name(var.name) in excluded:
                continue
            if var.pos_keyword in samples or var.neg_keyword in samples:
                blocks.append(
                    f"- name: {var.name}\n"
                    f'  criterion: 1 if the review mentions "{var.pos_keyword}"; '
                    f'-1 if the review mentions "{var.neg_keyword}"; '
                    f"0 otherwise or not mentioned."
                )
        return "\n".join(blocks) if blocks else "NONE"

    # -- annotation ------------------------------------------------------------

    def _annotate(self, prompt: str) -> str:
        crit_match = re.search(r"^criterion: (.*)$", prompt, re.MULTILINE)
        text_match = _REVIEW_TEXT_RE.search(prompt)
        if not crit_match or not text_match:
            return "0"
        keywords = _CRITERION_KEYWORDS_RE.findall(crit_match.group(1))
        text = text_match.group(1)
        if len(keywords) >= 1 and keywords[0] in text:
            return "1"
        if len(keywords) >= 2 and keywords[1] in text:
            return "-1"
        return "0"

    # -- confounder extraction ---------------------------------------------------

    def _confounder_block(self, var) -> str:
        return (
            f"- name: {var.name}\n"
            f"  description: whether the review signals {var.name} around the interaction.\n"
            f"  reasoning: {var.name} is an external marketing or service factor; "
            f"it directly affects whether the user interacts with the item and "
            f"indirectly affects interactions by shaping the user's preferences."
        )

    def _extract(self, prompt: str) -> str:
        section = prompt.rsplit(prompts.REFINED_HEADER, 1)[-1]
        section = section.split("## Task", 1)[0]
        refined = [normalize_name(n) for n in _REFINED_ITEM_RE.findall(section)]
        skip: set[str] = set()
        for line in prompt.splitlines():
            if line.startswith(prompts.SKIP_CONFOUNDERS_MARKER):
                listed = line[len(prompts.SKIP_CONFOUNDERS_MARKER):].strip().rstrip(".")
                for name in listed.split(","):
                    skip.add(normalize_name(name))
        blocks = []
        for name in refined:
            var = self._by_name.get(name)
            if var is None or var.category != "b" or name in skip:
                continue
            blocks.append(self._confounder_block(var))
        return "\n".join(blocks) if blocks else "NONE"

    def _direct(self, prompt: str) -> str:
        text = " ".join(_SAMPLE_RE.findall(prompt))
        blocks = []
        for var in self.vocabulary:
            if var.category != "b":
                continue
            if var.pos_keyword in text or var.neg_keyword in text:
                blocks.append(self._confounder_block(var))
        return "\n".join(blocks) if blocks else "NONE"
