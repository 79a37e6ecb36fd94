#!/usr/bin/env python3
"""Regenerates the bundled mini-corpus under data/mini/.

Output is a pure function of SEED; rerunning rewrites identical files.
"""

import json
import random
from pathlib import Path

SEED = 20240611
OUT = Path(__file__).resolve().parent.parent / "data" / "mini"

CATEGORIES = {
    "fruit": ["watermelon", "seedless watermelon", "strawberry", "banana", "apple", "pineapple", "blueberry", "mango", "peach", "raspberry"],
    "citrus": ["lemon", "lime", "orange", "grapefruit", "lemon juice", "lime juice", "orange zest"],
    "dairy": ["butter", "milk", "heavy cream", "sour cream", "cream cheese", "cheddar cheese", "parmesan cheese", "greek yogurt", "mozzarella cheese", "cool whip"],
    "dairy_alt": ["margarine", "soy milk", "almond milk", "coconut milk", "coconut cream"],
    "sweetener": ["sugar", "brown sugar", "honey", "maple syrup", "splenda sugar substitute", "powdered sugar", "agave nectar"],
    "grain": ["all-purpose flour", "whole wheat flour", "rolled oats", "white rice", "brown rice", "breadcrumbs", "graham cracker crust", "pasta", "cornmeal"],
    "protein": ["chicken breast", "ground beef", "ground turkey", "bacon", "shrimp", "tofu", "eggs", "pork chops", "salmon"],
    "vegetable": ["onion", "shallot", "garlic", "carrot", "celery", "zucchini", "eggplant", "spinach", "kale", "bell pepper", "tomato", "mushrooms", "potato", "sweet potato"],
    "fat": ["vegetable oil", "olive oil", "canola oil", "coconut oil", "shortening"],
    "herb": ["basil", "parsley", "cilantro", "oregano", "thyme", "rosemary", "dill"],
    "spice": ["salt", "black pepper", "cinnamon", "nutmeg", "paprika", "cumin", "chili powder", "ginger"],
    "liquid": ["boiling water", "water", "chicken broth", "vegetable broth", "white wine", "red wine vinegar", "apple cider vinegar", "soy sauce"],
    "baking": ["baking soda", "baking powder", "vanilla extract", "cocoa powder", "chocolate chips", "gelatin"],
    "nut": ["walnuts", "pecans", "almonds", "peanut butter"],
}

# Surface variants a scraped corpus would carry; the first alias is canonical.
ALIASES = {
    "lemon": ["lemon", "lemons"],
    "watermelon": ["watermelon", "watermelon wedges"],
    "eggs": ["eggs", "egg"],
    "onion": ["onion", "onions"],
    "carrot": ["carrot", "carrots"],
    "tomato": ["tomato", "tomatoes"],
    "mushrooms": ["mushrooms", "mushroom"],
    "walnuts": ["walnuts", "walnut"],
    "greek yogurt": ["greek yogurt", "Greek yoghurt"],
    "cool whip": ["cool whip", "cool whip topping"],
    "chili powder": ["chili powder", "chilli powder"],
    "shrimp": ["shrimp", "shrimps"],
}

SUBSTITUTES = {
    "lemon": ["lime", "orange"],
    "lemon juice": ["lime juice", "apple cider vinegar"],
    "butter": ["margarine", "coconut oil", "vegetable oil"],
    "milk": ["soy milk", "almond milk"],
    "heavy cream": ["coconut cream", "milk"],
    "sour cream": ["greek yogurt", "cream cheese"],
    "sugar": ["honey", "splenda sugar substitute", "brown sugar"],
    "brown sugar": ["sugar", "maple syrup"],
    "all-purpose flour": ["whole wheat flour"],
    "ground beef": ["ground turkey", "tofu"],
    "chicken breast": ["tofu", "pork chops"],
    "vegetable oil": ["canola oil", "olive oil"],
    "onion": ["shallot"],
    "white rice": ["brown rice"],
    "basil": ["parsley", "oregano"],
    "cilantro": ["parsley"],
    "chicken broth": ["vegetable broth"],
    "white wine": ["chicken broth"],
    "seedless watermelon": ["strawberry", "lime"],
    "cool whip": ["heavy cream"],
    "breadcrumbs": ["rolled oats", "cornmeal"],
    "walnuts": ["pecans", "almonds"],
    "zucchini": ["eggplant"],
    "spinach": ["kale"],
    "cheddar cheese": ["mozzarella cheese"],
    "bacon": ["ground turkey"],
    "honey": ["maple syrup", "agave nectar"],
    "shortening": ["butter"],
    "eggs": ["banana"],
    "graham cracker crust": ["breadcrumbs"],
}

DISHES = [
    ("Cake", ["all-purpose flour", "sugar", "butter", "eggs", "baking powder", "vanilla extract", "milk"]),
    ("Muffins", ["all-purpose flour", "brown sugar", "vegetable oil", "eggs", "baking soda", "salt"]),
    ("Cookies", ["all-purpose flour", "butter", "brown sugar", "eggs", "chocolate chips", "baking soda"]),
    ("Pie", ["graham cracker crust", "sugar", "cool whip", "gelatin", "boiling water"]),
    ("Stir Fry", ["vegetable oil", "garlic", "soy sauce", "onion", "white rice", "ginger"]),
    ("Soup", ["chicken broth", "onion", "carrot", "celery", "salt", "black pepper", "thyme"]),
    ("Salad", ["olive oil", "lemon juice", "salt", "black pepper", "tomato", "spinach"]),
    ("Casserole", ["ground beef", "onion", "cheddar cheese", "pasta", "tomato", "oregano"]),
    ("Smoothie", ["banana", "milk", "honey", "greek yogurt"]),
    ("Pasta", ["pasta", "olive oil", "garlic", "parmesan cheese", "basil", "salt"]),
    ("Tacos", ["ground beef", "chili powder", "cumin", "onion", "cilantro", "lime"]),
    ("Bread", ["all-purpose flour", "water", "salt", "sugar", "butter"]),
]

ADJECTIVES = ["Easy", "Classic", "Grandma's", "Quick", "Spicy", "Creamy", "Rustic", "Summer", "Holiday", "Weeknight", "Lemon", "Golden", "Hearty", "Simple", "Zesty"]

STEPS = {
    "Cake": ["Preheat oven to 350 degrees.", "Cream butter and sugar.", "Mix in remaining ingredients.", "Bake 30 minutes."],
    "Muffins": ["Preheat oven to 400 degrees.", "Combine dry ingredients.", "Stir in wet ingredients.", "Bake 20 minutes."],
    "Cookies": ["Cream butter and sugar.", "Add eggs and flour.", "Fold in chips.", "Bake 10 minutes."],
    "Pie": ["Dissolve gelatin in boiling water.", "Stir in filling.", "Pour into crust.", "Chill until set."],
    "Stir Fry": ["Heat oil in a wok.", "Cook aromatics.", "Add remaining ingredients and toss.", "Serve over rice."],
    "Soup": ["Saute vegetables.", "Add broth and simmer.", "Season to taste."],
    "Salad": ["Whisk the dressing.", "Toss with vegetables.", "Serve immediately."],
    "Casserole": ["Brown the meat.", "Layer ingredients in a dish.", "Bake 40 minutes."],
    "Smoothie": ["Blend everything until smooth."],
    "Pasta": ["Boil pasta.", "Toss with sauce.", "Top with cheese."],
    "Tacos": ["Brown the meat with spices.", "Warm tortillas.", "Assemble and garnish."],
    "Bread": ["Mix and knead dough.", "Let rise one hour.", "Bake 35 minutes."],
}

CATEGORY_OF = {name: cat for cat, names in CATEGORIES.items() for name in names}


def group_for(name):
    return ALIASES.get(name, [name])


def all_ingredients():
    names = set(CATEGORY_OF)
    for subs in SUBSTITUTES.values():
        names.update(subs)
    names.update(SUBSTITUTES)
    for _, base in DISHES:
        names.update(base)
    return sorted(names)


def make_recipes(rng):
    recipes = [
        {
            "id": "000d9a2b9a",
            "title": "Cool 'n Easy Creamy Watermelon Pie",
            "ingredients": [["boiling water"], ["cool whip", "cool whip topping"], ["seedless watermelon"], ["graham cracker crust"]],
            "instructions": ["Dissolve gelatin in boiling water.", "Stir in watermelon.", "Fold in cool whip.", "Chill in crust."],
        },
        {
            "id": "0006c5e4eb",
            "title": "Watermelon Lemonade Slush",
            "ingredients": [["watermelon", "watermelon wedges"], ["splenda sugar substitute"], ["lemon", "lemons"]],
            "instructions": ["Blend watermelon with ice.", "Stir in lemon juice and sweetener."],
        },
    ]
    titles = {r["title"] for r in recipes}
    extras = sorted(n for n in CATEGORY_OF if n not in ("boiling water",))
    while len(recipes) < 100:
        dish, base = DISHES[rng.randrange(len(DISHES))]
        adj = ADJECTIVES[rng.randrange(len(ADJECTIVES))]
        feature = extras[rng.randrange(len(extras))]
        title = f"{adj} {feature.title()} {dish}"
        if title in titles:
            continue
        titles.add(title)
        names = list(base)
        if feature not in names:
            names.insert(rng.randrange(len(names) + 1), feature)
        groups = []
        for n in names:
            aliases = group_for(n)
            if len(aliases) > 1 and rng.random() < 0.5:
                aliases = list(reversed(aliases))
            groups.append(list(aliases))
        rid = "%010x" % rng.getrandbits(40)
        recipes.append({"id": rid, "title": title, "ingredients": groups, "instructions": STEPS[dish]})
    return recipes


def substitutable(recipe):
    out = []
    for group in recipe["ingredients"]:
        canon = next((k for k, v in ALIASES.items() if group[0] in v), group[0])
        if canon in SUBSTITUTES:
            out.append((group[0], SUBSTITUTES[canon]))
    return out


def make_split(rng, recipes, n, used):
    rows = []
    attempts = 0
    while len(rows) < n:
        attempts += 1
        assert attempts < 100000, "cannot fill split"
        recipe = recipes[rng.randrange(len(recipes))]
        options = substitutable(recipe)
        if not options:
            continue
        source, targets = options[rng.randrange(len(options))]
        target = targets[rng.randrange(len(targets))]
        key = (recipe["id"], source)
        if key in used:
            continue
        used.add(key)
        rows.append({"id": recipe["id"], "ingredients": recipe["ingredients"], "subs": [source, target]})
    return rows


def vector_for(name, rng):
    cats = sorted(CATEGORIES)
    cat = CATEGORY_OF.get(name)
    base = [0.0] * len(cats)
    if cat is not None:
        base[cats.index(cat)] = 1.0
    noise = [round(rng.uniform(-0.35, 0.35), 4) for _ in cats]
    return [round(b + x, 4) for b, x in zip(base, noise)]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n")


def main():
    rng = random.Random(SEED)
    OUT.mkdir(parents=True, exist_ok=True)
    recipes = make_recipes(rng)

    write_jsonl(OUT / "recipes.jsonl", recipes)
    layer1 = [
        {
            "id": r["id"],
            "title": r["title"],
            "ingredients": [{"text": g[0]} for g in r["ingredients"]],
            "instructions": [{"text": s} for s in r["instructions"]],
            "partition": "train",
        }
        for r in recipes
    ]
    with open(OUT / "layer1.json", "w", encoding="utf-8") as f:
        json.dump(layer1, f, indent=1, ensure_ascii=False)
        f.write("\n")

    used = set()
    test = [
        {"id": "000d9a2b9a", "ingredients": recipes[0]["ingredients"], "subs": ["seedless watermelon", "lime"]},
        {"id": "0006c5e4eb", "ingredients": recipes[1]["ingredients"], "subs": ["lemon", "orange"]},
    ]
    used.update({("000d9a2b9a", "seedless watermelon"), ("0006c5e4eb", "lemon")})
    test += make_split(rng, recipes, 98, used)
    train = make_split(rng, recipes, 150, used)
    valid = make_split(rng, recipes, 50, used)
    write_jsonl(OUT / "train.jsonl", train)
    write_jsonl(OUT / "val.jsonl", valid)
    write_jsonl(OUT / "test.jsonl", test)

    vec_rng = random.Random(SEED + 1)
    names = set(all_ingredients())
    for r in recipes:
        for g in r["ingredients"]:
            names.update(a.lower() for a in g)
    write_jsonl(OUT / "vectors.jsonl", [{"ingredient": n, "vector": vector_for(n, vec_rng)} for n in sorted(names)])
    write_jsonl(OUT / "categories.jsonl", [{"ingredient": n, "category": c} for n, c in sorted(CATEGORY_OF.items())])

    # Mock endpoint answers: the first 60 test samples get the gold target.
    by_id = {r["id"]: r for r in recipes}
    wrong = "1. cardboard"

    def rules(rows, correct):
        out = []
        for i, row in enumerate(rows):
            source, target = row["subs"]
            needle = f"Dish: {by_id[row['id']]['title']}\nIngredient: {source}\n"
            out.append({"contains": needle, "response": f"1. {target}" if i < correct else wrong})
        return out

    write_jsonl(OUT / "mock_test.jsonl", rules(test, 60))
    # train answers feed preference mining: a third are correct
    write_jsonl(OUT / "mock_train.jsonl", rules(train, 50))


if __name__ == "__main__":
    main()
