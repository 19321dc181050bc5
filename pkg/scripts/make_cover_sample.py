"""Regenerate the bundled cover corpus (src/stegalyze/resources/cover_sample.txt).

The corpus is written by a small weighted English grammar. In every slot the
first two words of the list share ``--head`` of the probability mass and the
remaining words split the rest evenly, so the Markov chain trained on it has a
couple of dominant continuations per context and a long tail of rare ones,
like natural text.

    python3 scripts/make_cover_sample.py --sentences 20000 --seed 2019 --head 0.97 --extra 0.5
"""
import argparse
from pathlib import Path

import numpy as np

PEOPLE = """man woman boy girl teacher doctor farmer soldier king queen child stranger
driver student writer painter sailor baker lawyer nurse priest merchant hunter
captain neighbor officer singer player judge clerk miner pilot guard cook
friend brother sister mother father uncle aunt widow prince servant""".split()
ANIMALS = """dog cat horse bird fox wolf bear mouse rabbit goat sheep cow lion tiger
owl crow deer duck eagle snake frog pig hen monkey""".split()
THINGS = """book letter box door window car house key river road tree table chair
bottle ship train phone coat hat bag lamp clock knife ring map bridge garden
wall fire stone bell cup bed boat picture song story gift coin ticket rope
candle basket flag mirror blanket""".split()
PLACES = """city village market station school church forest park kitchen office
hospital harbor field hill valley library street square shop farm
castle beach island bank hotel prison museum cellar tower mill chapel
meadow cottage camp lake shore palace court yard barn tavern cave desert""".split()
ADJS = """old young little big small red green dark quiet strange happy tired
tall heavy bright cold warm empty broken lonely angry gentle poor rich
brave wild clever busy silent famous hidden proud sad new quick slow
ancient careful curious simple wooden golden narrow deep sudden lucky
pale soft bitter sweet hungry calm rough""".split()
VERBS_T = """saw found took opened closed watched carried followed visited
called helped left bought sold painted built broke lost kept wanted loved
heard pushed pulled held caught chased fixed cleaned moved read wrote
brought sent showed gave remembered noticed met asked thanked hid""".split()
VERBS_I = """laughed smiled slept waited cried arrived stopped ran walked
danced sang fell worked listened prayed returned vanished shouted
whispered sat stood jumped hurried rested wept sighed knelt paused
hesitated trembled wandered shivered coughed yawned nodded frowned
blushed groaned struggled""".split()
ADVS = """slowly quickly quietly again today suddenly carefully alone early late
together loudly softly happily sadly gently once twice finally often
never always soon outside anyway nervously proudly angrily calmly
eagerly bravely silently briefly warmly politely rudely kindly wisely
boldly""".split()
PREPS = "in near behind under across into beside".split()
TIMES = """yesterday | last night | in the morning | after dinner | before dawn |
on sunday""".split("|")
NAMES = """john mary anna peter tom lucy james emma paul sarah david alice mark
laura george helen frank rose henry clara oliver grace edward ruth arthur
martha walter irene hugo nora victor ida felix agnes simon lily oscar
vera leon hazel""".split()
PRONOUNS = "he she they we i you".split()
DETS = "the a his her my this".split()
CONJ = "and but so".split()
SAY = "said thought knew believed".split()
NOUNS = PEOPLE + ANIMALS + THINGS


class Grammar:
    """Sentence sampler; ``head`` is the mass of the two leading words per slot
    and ``extra`` the probability of each optional phrase."""

    def __init__(self, rng, head, extra):
        self.rng = rng
        self.head = head
        self.extra = extra
        self._w = {}

    def pick(self, words):
        n = len(words)
        if n not in self._w:
            w = np.full(n, (1.0 - self.head) / max(n - 2, 1))
            w[: min(n, 2)] = self.head / min(n, 2)
            self._w[n] = w / w.sum()
        return words[self.rng.choice(n, p=self._w[n])]

    def maybe(self, scale=1.0):
        return self.rng.random() < self.extra * scale

    def np(self, nouns=NOUNS):
        out = [self.pick(DETS)]
        if self.maybe():
            out.append(self.pick(ADJS))
        out.append(self.pick(nouns))
        return out

    def subject(self):
        if self.maybe(2.0):
            return [self.pick(PRONOUNS if self.maybe() else NAMES)]
        return self.np(PEOPLE + ANIMALS)

    def clause(self):
        s = self.subject()
        if self.maybe(2.0):
            s += [self.pick(VERBS_I)]
            if self.maybe():
                s.append(self.pick(ADVS))
        else:
            s += [self.pick(VERBS_T)] + self.np()
        if self.maybe():
            s += [self.pick(PREPS)] + self.np(PLACES)
        return s

    def sentence(self):
        if self.maybe(0.5):
            s = self.pick(TIMES).split() + [","] + self.clause()
        elif self.maybe(0.5):
            s = self.clause() + [",", self.pick(CONJ)] + self.clause()
        elif self.maybe(0.5):
            s = self.subject() + [self.pick(SAY), "that"] + self.clause()
        else:
            s = self.clause()
        return s + ["."]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sentences", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=2019)
    ap.add_argument("--head", type=float, default=0.97)
    ap.add_argument("--extra", type=float, default=0.5)
    ap.add_argument(
        "--out",
        type=Path,
        default=Path(__file__).resolve().parents[1] / "src" / "stegalyze" / "resources" / "cover_sample.txt",
    )
    args = ap.parse_args()
    g = Grammar(np.random.default_rng(args.seed), args.head, args.extra)
    lines = []
    for _ in range(args.sentences):
        words = g.sentence()
        text = " ".join(words).replace(" ,", ",").replace(" .", ".").replace(" ?", "?")
        lines.append(text[0].upper() + text[1:])
    args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} sentences to {args.out}")


if __name__ == "__main__":
    main()
