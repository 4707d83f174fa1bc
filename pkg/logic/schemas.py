# -*- coding: utf-8 -*-
"""
Built-in attribute schemas for the zero-shot pedestrian attribute datasets. Phrases are what prompts say for an
attribute; they must stay unambiguous within a schema. Exclusivity flags are schema data and can be overridden by
loading a schema file instead.
"""
import json
import pathlib

from logic.dataset import AttributeSchema, Category
from logic.errors import SchemaError

COLORS = ('black', 'blue', 'brown', 'green', 'grey', 'orange', 'pink', 'purple', 'red', 'white', 'yellow')


def rapzs_schema():
    categories = [
        Category('head', ('BaldHead', 'LongHair', 'BlackHair', 'Hat', 'Glasses')),
        Category('upper body', ('Shirt', 'Sweater', 'Vest', 'TShirt', 'Cotton', 'Jacket', 'SuitUp', 'Tight',
                                'ShortSleeve', 'Others')),
        Category('lower body', ('LongTrousers', 'Skirt', 'ShortSkirt', 'Dress', 'Jeans', 'TightTrousers')),
        Category('footwear', ('shoes-Leather', 'shoes-Sports', 'shoes-Boots', 'shoes-Cloth', 'shoes-Casual',
                              'shoes-Other')),
        Category('accessory', ('attachment-Backpack', 'attachment-ShoulderBag', 'attachment-HandBag',
                               'attachment-Box', 'attachment-PlasticBag', 'attachment-PaperBag',
                               'attachment-HandTrunk', 'attachment-Other')),
        Category('age', ('AgeLess16', 'Age17-30', 'Age31-45', 'Age46-60'), exclusive=True),
        Category('gender', ('Male', 'Female'), exclusive=True),
        Category('body shape', ('BodyFat', 'BodyNormal', 'BodyThin'), exclusive=True),
        Category('role', ('Customer', 'Employee'), exclusive=True),
        Category('action', ('action-Calling', 'action-Talking', 'action-Gathering', 'action-Holding',
                            'action-Pushing', 'action-Pulling', 'action-CarryingByArm', 'action-CarryingByHand',
                            'action-Other')),
    ]
    phrases = {
        'BaldHead': 'bald', 'LongHair': 'long hair', 'BlackHair': 'black hair', 'Hat': 'hat', 'Glasses': 'glasses',
        'Shirt': 'shirt', 'Sweater': 'sweater', 'Vest': 'vest', 'TShirt': 't-shirt', 'Cotton': 'cotton',
        'Jacket': 'jacket', 'SuitUp': 'suit', 'Tight': 'tight', 'ShortSleeve': 'short sleeve',
        'Others': 'other clothes',
        'LongTrousers': 'long trousers', 'Skirt': 'skirt', 'ShortSkirt': 'short skirt', 'Dress': 'dress',
        'Jeans': 'jeans', 'TightTrousers': 'tight trousers',
        'shoes-Leather': 'leather shoes', 'shoes-Sports': 'sports shoes', 'shoes-Boots': 'boots',
        'shoes-Cloth': 'cloth shoes', 'shoes-Casual': 'casual shoes', 'shoes-Other': 'other shoes',
        'attachment-Backpack': 'backpack', 'attachment-ShoulderBag': 'shoulder bag',
        'attachment-HandBag': 'hand bag', 'attachment-Box': 'box', 'attachment-PlasticBag': 'plastic bag',
        'attachment-PaperBag': 'paper bag', 'attachment-HandTrunk': 'hand trunk',
        'attachment-Other': 'other attachment',
        'AgeLess16': 'child', 'Age17-30': 'young adult', 'Age31-45': 'adult', 'Age46-60': 'middle-aged adult',
        'Male': 'man', 'Female': 'woman',
        'BodyFat': 'fat', 'BodyNormal': 'average build', 'BodyThin': 'thin',
        'Customer': 'customer', 'Employee': 'employee',
        'action-Calling': 'calling', 'action-Talking': 'talking', 'action-Gathering': 'gathering',
        'action-Holding': 'holding', 'action-Pushing': 'pushing', 'action-Pulling': 'pulling',
        'action-CarryingByArm': 'carrying by arm', 'action-CarryingByHand': 'carrying by hand',
        'action-Other': 'other action',
    }
    description = ("RAPzs dataset are images of pedestrians with attributes. The images are captured by a video "
                   "surveillance cameras at indoor scenes. Each image has a caption where attributes are described. "
                   "The size of each image is around 90 x 180 pixels.")
    return AttributeSchema('RAPzs', categories, phrases, description)


def _colour_category(name, prefix, suffix):
    attributes = tuple(prefix + c.capitalize() for c in COLORS)
    phrases = {prefix + c.capitalize(): c + suffix for c in COLORS}
    return Category(name, attributes), phrases


def petazs_schema():
    hair_colour, hair_colour_phrases = _colour_category('hair colour', 'hair', '-haired')
    upper_colour, upper_colour_phrases = _colour_category('upper body colour', 'upperBody', ' top')
    lower_colour, lower_colour_phrases = _colour_category('lower body colour', 'lowerBody', ' bottoms')
    footwear_colour, footwear_colour_phrases = _colour_category('footwear colour', 'footwear', ' footwear')
    categories = [
        Category('gender', ('personalMale', 'personalFemale'), exclusive=True),
        Category('age', ('personalLess30', 'personalLess45', 'personalLess60', 'personalLarger60'), exclusive=True),
        hair_colour,
        Category('hair', ('hairLong', 'hairShort', 'hairBald')),
        Category('upper body', ('upperBodyCasual', 'upperBodyFormal', 'upperBodyJacket', 'upperBodyLogo',
                                'upperBodyPlaid', 'upperBodyThinStripes', 'upperBodyTshirt', 'upperBodyOther',
                                'upperBodyVNeck', 'upperBodyShortSleeve')),
        upper_colour,
        Category('lower body', ('lowerBodyCasual', 'lowerBodyFormal', 'lowerBodyJeans', 'lowerBodyShorts',
                                'lowerBodyShortSkirt', 'lowerBodyTrousers', 'lowerBodyCapri', 'lowerBodyHotPants',
                                'lowerBodyLongSkirt', 'lowerBodyPlaid', 'lowerBodyThinStripes', 'lowerBodySuits')),
        lower_colour,
        Category('attachment', ('carryingBackpack', 'carryingOther', 'carryingMessengerBag', 'carryingNothing',
                                'carryingPlasticBags', 'carryingBabyBuggy', 'carryingShoppingTro',
                                'carryingUmbrella', 'carryingFolder', 'carryingLuggageCase', 'carryingSuitcase')),
        Category('accessory', ('accessoryHat', 'accessoryMuffler', 'accessoryNothing', 'accessorySunglasses',
                               'accessoryHeadphone', 'accessoryHairBand', 'accessoryKerchief')),
        Category('footwear', ('footwearLeatherShoes', 'footwearSandals', 'footwearShoes', 'footwearSneaker',
                              'footwearStocking')),
        footwear_colour,
    ]
    phrases = {
        'personalMale': 'man', 'personalFemale': 'woman',
        'personalLess30': 'under 30', 'personalLess45': 'under 45', 'personalLess60': 'under 60',
        'personalLarger60': 'over 60',
        'hairLong': 'long hair', 'hairShort': 'short hair', 'hairBald': 'bald',
        'upperBodyCasual': 'casual', 'upperBodyFormal': 'formal', 'upperBodyJacket': 'jacket',
        'upperBodyLogo': 'logo', 'upperBodyPlaid': 'plaid', 'upperBodyThinStripes': 'thin stripes',
        'upperBodyTshirt': 't shirt', 'upperBodyOther': 'other top', 'upperBodyVNeck': 'vneck',
        'upperBodyShortSleeve': 'short sleeve',
        'lowerBodyCasual': 'casual bottoms', 'lowerBodyFormal': 'formal bottoms', 'lowerBodyJeans': 'jeans',
        'lowerBodyShorts': 'shorts', 'lowerBodyShortSkirt': 'shortskirt', 'lowerBodyTrousers': 'trousers',
        'lowerBodyCapri': 'capri', 'lowerBodyHotPants': 'hotpants', 'lowerBodyLongSkirt': 'long skirt',
        'lowerBodyPlaid': 'plaid bottoms', 'lowerBodyThinStripes': 'striped bottoms', 'lowerBodySuits': 'suits',
        'carryingBackpack': 'backpack', 'carryingOther': 'other', 'carryingMessengerBag': 'messenger bag',
        'carryingNothing': 'empty-handed', 'carryingPlasticBags': 'plastic bags', 'carryingBabyBuggy': 'baby buggy',
        'carryingShoppingTro': 'shopping tro', 'carryingUmbrella': 'umbrella', 'carryingFolder': 'folder',
        'carryingLuggageCase': 'luggage case', 'carryingSuitcase': 'suit case',
        'accessoryHat': 'hat', 'accessoryMuffler': 'muffler', 'accessoryNothing': 'no accessory',
        'accessorySunglasses': 'sunglasses', 'accessoryHeadphone': 'headphone', 'accessoryHairBand': 'hairband',
        'accessoryKerchief': 'kerchief',
        'footwearLeatherShoes': 'leather shoes', 'footwearSandals': 'sandals', 'footwearShoes': 'shoes',
        'footwearSneaker': 'sneakers', 'footwearStocking': 'stocking',
    }
    for colour_phrases in (hair_colour_phrases, upper_colour_phrases, lower_colour_phrases, footwear_colour_phrases):
        phrases.update(colour_phrases)
    description = ("PETAzs dataset are images of pedestrians with attributes. The images are collected from several "
                   "outdoor and indoor surveillance datasets. Each image has a caption where attributes are described. "
                   "Image sizes range from 17 x 39 to 169 x 365 pixels.")
    return AttributeSchema('PETAzs', categories, phrases, description)


def pa100k_schema():
    categories = [
        Category('gender', ('Female',)),
        Category('age', ('AgeOver60', 'Age18-60', 'AgeLess18'), exclusive=True),
        Category('view', ('Front', 'Side', 'Back'), exclusive=True),
        Category('head', ('Hat', 'Glasses')),
        Category('attachment', ('HandBag', 'ShoulderBag', 'Backpack', 'HoldObjectsInFront')),
        Category('upper wearing', ('ShortSleeve', 'LongSleeve', 'LongCoat')),
        Category('upper pattern', ('UpperStride', 'UpperLogo', 'UpperPlaid', 'UpperSplice')),
        Category('lower clothes', ('Trousers', 'Shorts', 'Skirt&Dress')),
        Category('lower pattern', ('LowerStripe', 'LowerPattern')),
        Category('shoes', ('boots',)),
    ]
    phrases = {
        'Female': 'woman',
        'AgeOver60': 'elderly', 'Age18-60': 'adult', 'AgeLess18': 'teenager',
        'Front': 'front', 'Side': 'side', 'Back': 'back',
        'Hat': 'hat', 'Glasses': 'glasses',
        'HandBag': 'hand bag', 'ShoulderBag': 'shoulder bag', 'Backpack': 'back pack',
        'HoldObjectsInFront': 'holding object in front',
        'ShortSleeve': 'short sleeve', 'LongSleeve': 'long sleeve', 'LongCoat': 'long coat',
        'UpperStride': 'striped top', 'UpperLogo': 'logo', 'UpperPlaid': 'plaid', 'UpperSplice': 'splice',
        'Trousers': 'trousers', 'Shorts': 'short', 'Skirt&Dress': 'skirt or dress',
        'LowerStripe': 'stripe', 'LowerPattern': 'pattern',
        'boots': 'boots',
    }
    description = ("PA100k dataset are images of pedestrians with attributes. The images are captured by outdoor "
                   "surveillance cameras. Each image has a caption where attributes are described. Image sizes range "
                   "from 50 x 100 to 758 x 454 pixels.")
    return AttributeSchema('PA100k', categories, phrases, description)


SCHEMA_MAPPING = {
    'RAPzs': rapzs_schema,
    'PETAzs': petazs_schema,
    'PA100k': pa100k_schema,
}


def load_schema(name_or_path):
    """
    Return a built-in schema by dataset id, or read one from a JSON schema file (same fields as a manifest's schema
    record).
    """
    if name_or_path in SCHEMA_MAPPING:
        return SCHEMA_MAPPING[name_or_path]()
    path = pathlib.Path(name_or_path)
    if not path.exists():
        raise SchemaError("'{}' is neither a built-in schema ({}) nor a schema file".format(
            name_or_path, ", ".join(SCHEMA_MAPPING)))
    with open(path, encoding='utf-8') as f:
        return AttributeSchema.from_record(json.load(f))
