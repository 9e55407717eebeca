"""Prompt templates for the discovery loop, and parsers for the replies.

Each template carries a distinctive task line (the *_MARKER constants) so
that offline adapters can dispatch on prompt kind without extra metadata.
"""

from __future__ import annotations

import re

from .types import ReviewRecord, normalize_name

PROPOSAL_MARKER = "propose candidate causal variables"
ANNOTATION_MARKER = "Annotate one review against one variable"
EXTRACTION_MARKER = "identify the observed confounders"
DIRECT_MARKER = "identify observed confounders directly from the raw reviews"
AVOID_MARKER = "Do not propose variables named:"
SKIP_CONFOUNDERS_MARKER = "Skip variables already identified as confounders:"
REFINED_HEADER = "## Refined variables"

FORMAT_REMINDER = (
    "\n\nYour previous reply could not be parsed. Follow the output format "
    "exactly as specified, or reply NONE if there is nothing to report."
)


class ReplyParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}; raw reply: {raw[:400]!r}")
        self.raw = raw


def _sample_lines(samples: list[ReviewRecord]) -> str:
    return "\n".join(f"- [rating {r.rating}] {r.text}" for r in samples)


def proposal_prompt(domain: str, samples: list[ReviewRecord]) -> str:
    return f"""You are an expert analyst of user behavior on a {domain} platform.

## Review samples
The following reviews come from users who interacted with items, grouped by
rating score:
{_sample_lines(samples)}

## Task
Your job is to propose candidate causal variables that may affect whether a
user interacts with an item in the {domain} domain. Work in three phases:
1. Consider which interaction-related variables the reviews above reveal.
2. Filter them so the remaining variables are semantically distinct and
   non-redundant.
3. Output the filtered variables.
Each variable needs a name and a criterion that defines positive cases
(value 1), negative cases (value -1), and cases otherwise or not mentioned
(value 0).

## Output format
List one block per variable, exactly:
- name: <short variable name>
  criterion: <when to annotate 1, -1, and 0>
Reply NONE if no variables can be proposed."""


def feedback_prompt(prev_prompt: str, new_samples: list[ReviewRecord],
                    avoid_names: list[str]) -> str:
    avoid = ", ".join(sorted(avoid_names)) if avoid_names else "(none yet)"
    return f"""{prev_prompt}

## Additional review samples
These reviews are poorly explained by the variables found so far:
{_sample_lines(new_samples)}

## Feedback
{AVOID_MARKER} {avoid}.
Propose only new causal variables that are not in the list above, using the
same output format."""


def annotation_prompt(domain: str, name: str, criterion: str,
                      review: ReviewRecord) -> str:
    return f"""Annotate one review against one variable for the {domain} domain.

## Variable
name: {name}
criterion: {criterion}

## Review
rating: {review.rating}
text: {review.text}

## Output format
Reply with exactly one token: 1, -1, or 0."""


def _example_block(positive: dict | None, negative: dict | None,
                   domain: str, refined: list[str]) -> str:
    if positive is None:
        return ""
    refined_inline = ", ".join(refined) if refined else "(empty)"
    lines = ["## Examples",
             f"Positive example (an identified confounder; domain: {domain}; "
             f"refined set: {refined_inline}):",
             f"  name: {positive['name']}",
             f"  description: {positive['description']}",
             f"  reasoning: {positive['reasoning']}"]
    if negative is not None:
        lines += [f"Negative example (determined not to be a confounder; "
                  f"domain: {domain}; refined set: {refined_inline}):",
                  f"  name: {negative['name']}",
                  f"  description: {negative['description']}",
                  f"  reasoning: {negative['reasoning']}"]
    return "\n".join(lines) + "\n\n"


def extraction_prompt(domain: str, refined: list[str], pool_names: list[str],
                      positive_example: dict | None = None,
                      negative_example: dict | None = None) -> str:
    skip = ", ".join(sorted(pool_names)) if pool_names else "(none)"
    examples = _example_block(positive_example, negative_example, domain, refined)
    bullets = "\n".join(f"- {n}" for n in refined)
    return f"""{examples}## Input data and context
Domain: {domain}
{REFINED_HEADER}
These variables passed statistical validation against user-item interactions:
{bullets}

## Task
Your job is to identify the observed confounders among the refined variables.
1. Write a brief description of each variable.
2. Classify each variable into: (a) an item intrinsic attribute or an
   explicit user preference, or (b) a marketing, service, or other external
   factor. Category (b) variables are more likely to be confounders.
3. Reason step by step, then identify a variable as a confounder only if it
   both directly affects user-item interactions and indirectly affects them
   by influencing user preferences.
{SKIP_CONFOUNDERS_MARKER} {skip}.

## Output format
One block per identified confounder, exactly:
- name: <variable name>
  description: <one sentence>
  reasoning: <why it qualifies as an observed confounder>
Reply NONE if no new confounder is found."""


def direct_extraction_prompt(domain: str, samples: list[ReviewRecord]) -> str:
    return f"""You are analyzing user reviews from the {domain} domain.

## Reviews
{_sample_lines(samples)}

## Task
Your job is to identify observed confounders directly from the raw reviews:
factors that both directly affect user-item interactions and indirectly
affect them by influencing user preferences.

## Output format
One block per identified confounder, exactly:
- name: <variable name>
  description: <one sentence>
  reasoning: <why it qualifies as an observed confounder>
Reply NONE if no confounder is found."""


# -- reply parsers -------------------------------------------------------------

_VARIABLE_RE = re.compile(r"-\s*name:\s*(?P<name>.+?)\s*\n\s*criterion:\s*(?P<crit>.+?)\s*(?=\n-|\n\n|\Z)", re.DOTALL)
_CONFOUNDER_RE = re.compile(
    r"-\s*name:\s*(?P<name>.+?)\s*\n\s*description:\s*(?P<desc>.+?)\s*\n\s*reasoning:\s*(?P<reason>.+?)\s*(?=\n-|\n\n|\Z)",
    re.DOTALL,
)


def parse_variables(text: str) -> list[tuple[str, str]]:
    """(name, criterion) pairs from a proposal reply; NONE parses as empty."""
    if text.strip().upper() == "NONE":
        return []
    out = [(normalize_name(m.group("name")), " ".join(m.group("crit").split()))
           for m in _VARIABLE_RE.finditer(text)]
    if not out:
        raise ReplyParseError("no variable blocks found", text)
    return out


def parse_annotation(text: str) -> int:
    token = text.strip()
    if token in ("1", "-1", "0"):
        return int(token)
    raise ReplyParseError("annotation must be one of 1, -1, 0", text)


def parse_confounders(text: str) -> list[dict]:
    if text.strip().upper() == "NONE":
        return []
    out = [
        {
            "name": normalize_name(m.group("name")),
            "description": " ".join(m.group("desc").split()),
            "reasoning": " ".join(m.group("reason").split()),
        }
        for m in _CONFOUNDER_RE.finditer(text)
    ]
    if not out:
        raise ReplyParseError("no confounder blocks found", text)
    return out
