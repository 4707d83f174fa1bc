# -*- coding: utf-8 -*-
"""
Prompt builders: the handcrafted baseline and integration grammars, attribute grammars driven by annotations, MALS
captions, and the inverse operation (attributes stated by a text) used for alignment checks and labelling.
"""
import hashlib
import logging
from dataclasses import dataclass
from typing import FrozenSet, Optional

import numpy as np

from logic.errors import PromptError
from logic.grammars import check_grammar, is_encoded, load_grammar

logger = logging.getLogger(__name__)

BASELINE_COLORS = ('white', 'black', 'red', 'blue', 'yellow', 'orange')
BASELINE_CLOTHES = ('sweater', 't-shirt', 'dress', 'jeans', 'hat', 'hair')
BASELINE_WITH = ('hat', 'hair')

INTEGRATION_VOCABULARY = {
    'template': ('There is a', 'A photo of'),
    'article': ('a', 'an', 'the'),
    'age': ('young', 'old', 'little', 'elderly'),
    'body': ('tall', 'short', 'big', 'small'),
    'expression': ('smiling', 'crying', 'displeased'),
    'class': ('pedestrian',),
    'clothes_article': ('in', 'wearing', 'with'),
    'clothes': ('t-shirt', 'dress', 'jeans', 'hat', 'hair', 'sweater'),
    'color': ('white', 'black', 'red', 'blue', 'yellow', 'orange'),
    'pose': ('standing', 'walking', 'sitting', 'crouching'),
    'direction': ('in front', 'in profile', 'from behind'),
    'action': ('walking',),
}
INTEGRATION_SLOTS = tuple(INTEGRATION_VOCABULARY)


@dataclass(frozen=True)
class PromptRecord:
    text: str
    attributes: FrozenSet[str]
    builder: str
    source_sample_id: Optional[str] = None

    def to_record(self):
        return {
            'text': self.text,
            'attributes': sorted(self.attributes),
            'builder': self.builder,
            'source_sample_id': self.source_sample_id,
        }


def build_baseline_prompt(color, clothes):
    if color not in BASELINE_COLORS:
        raise PromptError("color '{}' is not in the baseline vocabulary ({})".format(color, ", ".join(BASELINE_COLORS)))
    if clothes not in BASELINE_CLOTHES:
        raise PromptError("clothes '{}' is not in the baseline vocabulary ({})".format(
            clothes, ", ".join(BASELINE_CLOTHES)))
    verb = 'with' if clothes in BASELINE_WITH else 'wearing'
    text = "A photo of a pedestrian {} {} {}".format(verb, color, clothes)
    return PromptRecord(text, frozenset((color, clothes)), 'baseline')


def build_integration_prompt(slots, seed):
    """
    Fill the integration grammar. Slots given as None are left out; slots not given at all are drawn uniformly from
    their vocabulary, in slot order, with a generator seeded by `seed`.
    """
    unknown = [s for s in slots if s not in INTEGRATION_VOCABULARY]
    if unknown:
        raise PromptError("unknown integration slot(s): {}".format(", ".join(unknown)))
    rng = np.random.default_rng(seed=int(seed))
    words = []
    chosen = {}
    for slot in INTEGRATION_SLOTS:
        vocabulary = INTEGRATION_VOCABULARY[slot]
        if slot in slots:
            value = slots[slot]
            if value is not None and value not in vocabulary:
                raise PromptError("'{}' is not a valid {} ({})".format(value, slot, ", ".join(vocabulary)))
        else:
            value = vocabulary[rng.integers(len(vocabulary))]
        chosen[slot] = value
        if value is not None:
            words.append(value)
    attributes = frozenset(chosen[s] for s in ('clothes', 'color') if chosen[s] is not None)
    return PromptRecord(" ".join(words) + ".", attributes, 'integration')


def parse_integration_prompt(text):
    """
    Inverse of build_integration_prompt: map each slot to the value found in the text, or None when the slot is
    absent. Raises PromptError when words remain that no slot accounts for.
    """
    words = text.strip().rstrip('.').split()
    position = 0
    slots = {}
    for slot in INTEGRATION_SLOTS:
        slots[slot] = None
        # longest value first, so "A photo of" wins over shorter prefixes
        for value in sorted(INTEGRATION_VOCABULARY[slot], key=lambda v: -len(v.split())):
            value_words = value.split()
            if words[position:position + len(value_words)] == value_words:
                slots[slot] = value
                position += len(value_words)
                break
    if position != len(words):
        raise PromptError("cannot parse '{}' as an integration prompt (stuck at word {})".format(text, position + 1))
    return slots


def extract_attributes(text, schema):
    return schema.find_attributes(text)


def _stable_index(key, n):
    return int(hashlib.sha256(key.encode('utf-8')).hexdigest(), 16) % n


def build_attribute_prompt(sample, schema, grammar, template=None):
    """
    Describe a sample's positive attributes with an attribute grammar.
    @param sample: the annotated PedestrianSample
    @param schema: the AttributeSchema of the sample
    @param grammar: a Grammar or the id of a built-in one
    @param template: the opening words. Default picks one of the grammar's templates from a hash of the sample id.
    @return: a PromptRecord whose attributes are exactly the attributes stated by the text
    """
    grammar = load_grammar(grammar)
    check_grammar(grammar, schema)
    if template is None:
        template = grammar.templates[_stable_index(sample.sample_id, len(grammar.templates))]
    elif template not in grammar.templates:
        raise PromptError("template '{}' is not one of {}".format(template, grammar.templates))

    positives = sample.attributes.positives(schema)
    encoded = frozenset(a for a, w in grammar.items() if a in positives and is_encoded(schema, a, w))

    def render(slot):
        # a decorative word only appears when whatever it reads as is already stated
        return [w for a, w in slot.items
                if a in positives and (is_encoded(schema, a, w) or schema.find_attributes(w) <= encoded)]

    words = [template]
    words.extend(render(grammar.gender) or [grammar.class_word])
    for segment in grammar.segments:
        segment_words = []
        for slot in segment.slots:
            garment = render(slot)
            if garment and slot.colour is not None:
                segment_words.extend(render(slot.colour))
            segment_words.extend(garment)
        if segment_words:
            if segment.connective:
                segment_words.insert(0, segment.connective)
            words.extend(segment_words)
    return PromptRecord(" ".join(words) + ".", encoded, grammar.grammar_id, sample.sample_id)


def build_caption_prompt(sample, manifest, aligned=True, seed=0):
    """
    Use MALS-style captions as prompts. Aligned prompts are the sample's own caption; unaligned ones are the caption
    of another captioned sample, picked from (seed, sample id).
    """
    schema = manifest.schema
    if aligned:
        if not sample.caption:
            raise PromptError("sample '{}' has no caption".format(sample.sample_id))
        caption, builder = sample.caption, 'mals-aligned'
    else:
        others = [s for s in manifest.samples if s.caption and s.sample_id != sample.sample_id]
        if not others:
            raise PromptError("no other captioned sample to pair with '{}'".format(sample.sample_id))
        rng = np.random.default_rng(seed=[int(seed), _stable_index(sample.sample_id, 2 ** 32)])
        caption, builder = others[rng.integers(len(others))].caption, 'mals-unaligned'
    return PromptRecord(caption, extract_attributes(caption, schema), builder, sample.sample_id)


def check_alignment(prompt, sample, schema):
    return prompt.attributes <= sample.attributes.positives(schema)


def alignment_rate(prompts, samples, schema):
    pairs = list(zip(prompts, samples))
    if not pairs:
        return 0.0
    return sum(1 for p, s in pairs if check_alignment(p, s, schema)) / len(pairs)
