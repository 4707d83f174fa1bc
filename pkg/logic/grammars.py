# -*- coding: utf-8 -*-
"""
Prompt grammars that turn attribute annotations into sentences. A grammar is an ordered list of segments; each
segment is a connective word followed by slots, and each slot lists the (attribute, surface word) pairs it may render,
in order. A slot may carry a colour slot that is rendered right before it.

Grammars are plain data: they can be written to JSON, edited and loaded back.
"""
import json
import pathlib
from dataclasses import dataclass
from typing import Optional, Tuple

from logic.errors import PromptError
from logic.schemas import COLORS

DEFAULT_TEMPLATES = ('A', 'There is a')
CLASS_WORD = 'pedestrian'


@dataclass(frozen=True)
class Slot:
    category: str
    items: Tuple[Tuple[str, str], ...]
    colour: Optional['Slot'] = None

    def to_record(self):
        record = {'category': self.category, 'items': [list(item) for item in self.items]}
        if self.colour is not None:
            record['colour'] = self.colour.to_record()
        return record

    @classmethod
    def from_record(cls, record):
        colour = record.get('colour')
        return cls(record['category'], tuple((a, w) for a, w in record['items']),
                   cls.from_record(colour) if colour else None)


@dataclass(frozen=True)
class Segment:
    connective: str
    slots: Tuple[Slot, ...]


@dataclass(frozen=True)
class Grammar:
    grammar_id: str
    dataset_id: str
    gender: Slot
    segments: Tuple[Segment, ...]
    templates: Tuple[str, ...] = DEFAULT_TEMPLATES
    class_word: str = CLASS_WORD

    def slots(self):
        yield self.gender
        for segment in self.segments:
            for slot in segment.slots:
                if slot.colour is not None:
                    yield slot.colour
                yield slot

    def items(self):
        for slot in self.slots():
            yield from slot.items

    def to_record(self):
        return {
            'grammar_id': self.grammar_id,
            'dataset_id': self.dataset_id,
            'templates': list(self.templates),
            'class_word': self.class_word,
            'gender': self.gender.to_record(),
            'segments': [{'connective': s.connective, 'slots': [slot.to_record() for slot in s.slots]}
                         for s in self.segments],
        }

    @classmethod
    def from_record(cls, record):
        try:
            return cls(
                grammar_id=record['grammar_id'],
                dataset_id=record['dataset_id'],
                gender=Slot.from_record(record['gender']),
                segments=tuple(Segment(s['connective'], tuple(Slot.from_record(slot) for slot in s['slots']))
                               for s in record['segments']),
                templates=tuple(record.get('templates', DEFAULT_TEMPLATES)),
                class_word=record.get('class_word', CLASS_WORD),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise PromptError("invalid grammar record ({})".format(e)) from None


def _slot(category, *items, colour=None):
    return Slot(category, tuple(items), colour)


def _colours(category, prefix):
    return Slot(category, tuple((prefix + c.capitalize(), c) for c in COLORS))


def petazs_grammar():
    # colour items render the bare colour word, which is not the phrase of any attribute
    return Grammar(
        grammar_id='PETAzs',
        dataset_id='PETAzs',
        gender=_slot('gender', ('personalFemale', 'woman'), ('personalMale', 'man')),
        segments=(
            Segment('with', (
                _slot('hair', ('hairLong', 'long hair'), ('hairBald', 'bald'), ('hairShort', 'short hair'),
                      colour=_colours('hair colour', 'hair')),
            )),
            Segment('carrying', (
                _slot('attachment', ('carryingBackpack', 'backpack'), ('carryingOther', 'other'),
                      ('carryingMessengerBag', 'messenger bag'), ('carryingNothing', 'nothing'),
                      ('carryingPlasticBags', 'plastic bags'), ('carryingBabyBuggy', 'baby buggy'),
                      ('carryingShoppingTro', 'shopping tro'), ('carryingUmbrella', 'umbrella'),
                      ('carryingFolder', 'folder'), ('carryingLuggageCase', 'luggage case'),
                      ('carryingSuitcase', 'suit case')),
            )),
            Segment('with', (
                _slot('accessory', ('accessoryHat', 'hat'), ('accessoryMuffler', 'muffler'),
                      ('accessoryNothing', 'nothing'), ('accessorySunglasses', 'sunglasses'),
                      ('accessoryHeadphone', 'headphone'), ('accessoryHairBand', 'hairband'),
                      ('accessoryKerchief', 'kerchief')),
            )),
            Segment('wearing', (
                _slot('upper body', ('upperBodyCasual', 'casual'), ('upperBodyFormal', 'formal'),
                      ('upperBodyJacket', 'jacket'), ('upperBodyLogo', 'logo'), ('upperBodyPlaid', 'plaid'),
                      ('upperBodyThinStripes', 'thin stripes'), ('upperBodyTshirt', 't shirt'),
                      ('upperBodyOther', 'other'), ('upperBodyVNeck', 'vneck'),
                      colour=_colours('upper body colour', 'upperBody')),
                _slot('lower body', ('lowerBodyCasual', 'casual'), ('lowerBodyFormal', 'formal'),
                      ('lowerBodyJeans', 'jeans'), ('lowerBodyShorts', 'shorts'),
                      ('lowerBodyShortSkirt', 'shortskirt'), ('lowerBodyTrousers', 'trousers'),
                      ('lowerBodyCapri', 'capri'), ('lowerBodyHotPants', 'hotpants'),
                      ('lowerBodyLongSkirt', 'long skirt'), ('lowerBodyPlaid', 'plaid'),
                      ('lowerBodyThinStripes', 'thin stripes'), ('lowerBodySuits', 'suits'),
                      colour=_colours('lower body colour', 'lowerBody')),
                _slot('footwear', ('footwearLeatherShoes', 'leather shoes'), ('footwearSandals', 'sandals'),
                      ('footwearShoes', 'shoes'), ('footwearSneaker', 'sneakers'), ('footwearStocking', 'stocking'),
                      colour=_colours('footwear colour', 'footwear')),
            )),
        ),
    )


def pa100k_grammar():
    return Grammar(
        grammar_id='PA100k',
        dataset_id='PA100k',
        gender=_slot('gender', ('Female', 'woman')),
        segments=(
            Segment('from', (_slot('view', ('Front', 'front'), ('Side', 'side'), ('Back', 'back')),)),
            Segment('with', (
                _slot('attachment', ('HandBag', 'hand bag'), ('ShoulderBag', 'shoulder bag'),
                      ('Backpack', 'back pack'), ('HoldObjectsInFront', 'holding object in front')),
            )),
            Segment('wearing', (
                _slot('upper wearing', ('ShortSleeve', 'short sleeve'), ('LongSleeve', 'long sleeve'),
                      ('LongCoat', 'long coat')),
                _slot('upper pattern', ('UpperLogo', 'logo'), ('UpperPlaid', 'plaid'), ('UpperSplice', 'splice')),
                _slot('lower clothes', ('Trousers', 'trousers'), ('Shorts', 'short'),
                      ('Skirt&Dress', 'skirt or dress')),
                _slot('lower pattern', ('LowerStripe', 'stripe'), ('LowerPattern', 'pattern')),
                # boots is the only shoe option of this grammar
                _slot('shoes', ('boots', 'boots')),
            )),
        ),
    )


def rapzs_grammar():
    return Grammar(
        grammar_id='RAPzs',
        dataset_id='RAPzs',
        gender=_slot('gender', ('Male', 'man'), ('Female', 'woman')),
        segments=(
            Segment('with', (_slot('head', ('BaldHead', 'bald'), ('LongHair', 'long hair'),
                                     ('BlackHair', 'black hair'), ('Hat', 'hat'), ('Glasses', 'glasses')),)),
            Segment('is', (_slot('action', ('action-Calling', 'calling'), ('action-Talking', 'talking'),
                                   ('action-Gathering', 'gathering'), ('action-Holding', 'holding'),
                                   ('action-Pushing', 'pushing'), ('action-Pulling', 'pulling'),
                                   ('action-CarryingByArm', 'carrying by arm'),
                                   ('action-CarryingByHand', 'carrying by hand'),
                                   ('action-Other', 'other action')),)),
            Segment('', (_slot('accessory', ('attachment-Backpack', 'backpack'),
                                 ('attachment-ShoulderBag', 'shoulder bag'), ('attachment-HandBag', 'hand bag'),
                                 ('attachment-Box', 'box'), ('attachment-PlasticBag', 'plastic bag'),
                                 ('attachment-PaperBag', 'paper bag'), ('attachment-HandTrunk', 'hand trunk'),
                                 ('attachment-Other', 'other attachment')),)),
            Segment('wearing', (_slot('upper body', ('Shirt', 'shirt'), ('Sweater', 'sweater'), ('Vest', 'vest'),
                                        ('TShirt', 't-shirt'), ('Cotton', 'cotton'), ('Jacket', 'jacket'),
                                        ('SuitUp', 'suit'), ('Tight', 'tight'), ('ShortSleeve', 'short sleeve'),
                                        ('Others', 'other clothes')),)),
            Segment('wearing', (_slot('lower body', ('LongTrousers', 'long trousers'), ('Skirt', 'skirt'),
                                        ('ShortSkirt', 'short skirt'), ('Dress', 'dress'), ('Jeans', 'jeans'),
                                        ('TightTrousers', 'tight trousers')),)),
            Segment('wearing', (_slot('footwear', ('shoes-Leather', 'leather shoes'),
                                        ('shoes-Sports', 'sports shoes'), ('shoes-Boots', 'boots'),
                                        ('shoes-Cloth', 'cloth shoes'), ('shoes-Casual', 'casual shoes'),
                                        ('shoes-Other', 'other shoes')),)),
        ),
    )


GRAMMAR_MAPPING = {
    'RAPzs': rapzs_grammar,
    'PETAzs': petazs_grammar,
    'PA100k': pa100k_grammar,
}


def load_grammar(name_or_path):
    if isinstance(name_or_path, Grammar):
        return name_or_path
    if name_or_path in GRAMMAR_MAPPING:
        return GRAMMAR_MAPPING[name_or_path]()
    path = pathlib.Path(name_or_path)
    if not path.exists():
        raise PromptError("unknown grammar '{}' (built-in: {})".format(name_or_path, ", ".join(GRAMMAR_MAPPING)))
    with open(path, encoding='utf-8') as f:
        return Grammar.from_record(json.load(f))


def save_grammar(grammar, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(grammar.to_record(), f, indent=4, ensure_ascii=False)


def check_grammar(grammar, schema):
    """Raise PromptError unless the grammar targets this schema and only names its attributes."""
    if grammar.dataset_id != schema.dataset_id:
        raise PromptError("grammar {} is for dataset {}, schema is {}".format(
            grammar.grammar_id, grammar.dataset_id, schema.dataset_id))
    unknown = sorted({a for a, _ in grammar.items() if a not in schema})
    if unknown:
        raise PromptError("grammar {} names attributes missing from schema {}: {}".format(
            grammar.grammar_id, schema.dataset_id, ", ".join(unknown)))


def is_encoded(schema, attribute, surface):
    return schema.lookup_phrase(surface) == attribute


def covered_attributes(grammar, schema):
    """Attributes a grammar states by their own phrase; only these end up in a built prompt's attribute set."""
    check_grammar(grammar, schema)
    return frozenset(a for a, w in grammar.items() if is_encoded(schema, a, w))
