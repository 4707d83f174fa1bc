# -*- coding: utf-8 -*-
"""
Requests for language models that write prompts (DALDA and ALIA styles), parsing of their answers, and the client
interface. No model is run here; FileLlmClient replays canned answers for offline use.
"""
import ast
import json
import logging
import pathlib
import re
from dataclasses import dataclass

from logic.errors import LlmResponseError, PromptError
from logic.prompts import PromptRecord, extract_attributes

logger = logging.getLogger(__name__)

STYLES = ('DALDA', 'ALIA')

DALDA_REQUEST = (
    "{description}\n"
    "The attribute categories and their options are:\n"
    "{categories}\n"
    "So you must create {count} sentence with a combination of each attribute category, remind that the binary "
    "categories should be used with their name or not appear at the sentence. The output should always be in json "
    "format, no text other than json is required like this: 'prompt1': 'sentence', 'prompt2': 'sentence'"
)

ALIA_REQUEST = (
    "I have a set of image captions that I want to summarize into objective descriptions that describe the scenes, "
    "actions, camera pose, zoom, and other image qualities present.\n"
    "My captions are:\n"
    "{captions}\n"
    "I want the output to be a less than {count} of captions that describe a unique setting, of the form \"{prefix}\".\n"
    "Here are 1 examples of what I want the output to look like:\n"
    "- {example}"
)
ALIA_PREFIX = "A pedestrian ..."
ALIA_EXAMPLE = "A male with a hat, carrying attachment-Backpack, walking in a shopping mall."

_LIST_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


@dataclass(frozen=True)
class LlmRequest:
    style: str
    text: str
    expected_count: int


def build_llm_request(style, schema, captions=None, count=100, prefix=ALIA_PREFIX):
    """
    Build the instruction sent to a language model.
    @param style: DALDA (attribute lists of the schema) or ALIA (summary of given captions)
    @param schema: the AttributeSchema whose description and categories are embedded (DALDA)
    @param captions: the captions to summarise; required for ALIA
    @param count: number of prompts requested
    @param prefix: the sentence form requested from ALIA
    @return: an LlmRequest
    """
    if count < 1:
        raise PromptError("count must be >= 1, got {}".format(count))
    if style == 'DALDA':
        categories = "\n".join("{}: [{}]".format(c.name, ", ".join(c.attributes)) for c in schema.categories)
        text = DALDA_REQUEST.format(description=schema.description or "{} dataset are images of pedestrians with "
                                    "attributes.".format(schema.dataset_id),
                                    categories=categories, count=count)
    elif style == 'ALIA':
        if not captions:
            raise PromptError("ALIA requests need captions")
        text = ALIA_REQUEST.format(captions="\n".join(captions), count=count, prefix=prefix, example=ALIA_EXAMPLE)
    else:
        raise PromptError("unknown request style '{}' (expected one of {})".format(style, ", ".join(STYLES)))
    return LlmRequest(style, text, count)


def _load_key_values(response):
    text = response.strip()
    if not text.startswith('{'):
        text = '{' + text + '}'
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        error = e
    # answers often use single quotes, as in the example given in the request
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    offset = error.pos - (1 if not response.strip().startswith('{') else 0)
    raise LlmResponseError("unparseable key/value response ({})".format(error.msg), max(offset, 0))


def parse_llm_response(style, response, schema):
    """Turn a model answer into prompt records whose attributes are the schema attributes the text states."""
    if not response.strip():
        return []
    if style == 'DALDA':
        values = _load_key_values(response)
        if isinstance(values, dict):
            sentences = list(values.values())
        elif isinstance(values, (list, tuple)):
            sentences = list(values)
        else:
            raise LlmResponseError("expected a key/value object, got {}".format(type(values).__name__))
        for i, sentence in enumerate(sentences):
            if not isinstance(sentence, str):
                raise LlmResponseError("value {} is not a sentence".format(i + 1))
    elif style == 'ALIA':
        sentences = [_LIST_MARKER.sub('', line).strip() for line in response.splitlines()]
        sentences = [s for s in sentences if s]
    else:
        raise PromptError("unknown request style '{}'".format(style))
    builder = 'llm-' + style.lower()
    return [PromptRecord(s, extract_attributes(s, schema), builder) for s in sentences]


class LlmClient:
    def send(self, request):
        raise NotImplementedError("LlmClient subclass must implement 'send' method.")


class FileLlmClient(LlmClient):
    """
    Replays answers from a fixture file: either a JSON object mapping style -> answer, or plain text returned for
    every request.
    """

    def __init__(self, path):
        self.path = pathlib.Path(path)
        content = self.path.read_text(encoding='utf-8')
        self.responses = None
        try:
            loaded = json.loads(content)
            if isinstance(loaded, dict) and set(loaded) <= set(STYLES):
                self.responses = loaded
        except json.JSONDecodeError:
            pass
        self.default = content

    def send(self, request):
        logger.debug("Replaying %s answer from %s", request.style, self.path)
        if self.responses is not None:
            if request.style not in self.responses:
                raise LlmResponseError("fixture {} has no {} answer".format(self.path, request.style))
            return self.responses[request.style]
        return self.default
