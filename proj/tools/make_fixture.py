#!/usr/bin/env python3
"""Writes the bundled synthetic review fixture (40 reviews, gold = first sentence).

Opening sentences draw on a verdict vocabulary that never appears in the
body sentences, so ROUGE auto-labelling marks exactly the first sentence of
each review as relevant.
"""
import argparse
import json
import random

VERDICT_ADJ = ["excellent", "superb", "outstanding", "terrible", "awful", "mediocre",
               "fantastic", "dreadful", "solid", "disappointing"]
VERDICT_NOUN = ["value", "quality", "purchase", "buy", "investment"]
VERDICT_TAIL = ["highly recommended", "would avoid", "worth every penny",
                "total letdown", "definitely recommended", "not recommended"]

PRODUCTS = ["coffee", "kettle", "blender", "toaster", "grinder", "teapot", "mug", "skillet"]
BODY = [
    "i bought this {p} for my kitchen last week",
    "shipping took {n} days and the box arrived dented",
    "my wife uses the {p} every morning before work",
    "the manual says to rinse it with warm water first",
    "it sits on the counter next to the sink",
    "we also ordered a spare lid from www.example.com",
    "the color is a dark shade of green",
    "my neighbor has the same {p} at home",
    "it came with a small brush and a measuring spoon",
    "i paid {n} dollars at the local store",
    "the handle gets warm after a few minutes",
    "details are listed at https://example.org/{p}",
    "there is a sticker on the bottom with the model number",
    "the cord is about {n} feet long",
    "my kids like to watch it while i cook",
]
END = [".", "!", ".", ";", "?"]


def make_review(i, rng):
    product = rng.choice(PRODUCTS)
    gold = "{} {}, {} {}".format(rng.choice(VERDICT_ADJ).capitalize(), rng.choice(VERDICT_NOUN),
                                 rng.choice(VERDICT_ADJ), rng.choice(VERDICT_TAIL))
    first = gold + "!"
    body = [rng.choice(BODY).format(p=product, n=rng.randint(2, 40)) for _ in range(rng.randint(3, 5))]
    sentences = [first] + [s[0].upper() + s[1:] + rng.choice(END) for s in body]
    return {"review_id": "r{:02d}".format(i), "text": " ".join(sentences), "summary": gold}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/fixture.jsonl")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        for i in range(40):
            f.write(json.dumps(make_review(i, rng)) + "\n")


if __name__ == "__main__":
    main()
