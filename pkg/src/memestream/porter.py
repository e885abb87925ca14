"""Self-contained Porter stemmer (the classic published rule set).

Operates on lowercase ASCII words. Tokens of length <= 2 are returned
unchanged, as is common practice for this stemmer.
"""

from __future__ import annotations


def _cons_flags(word: str) -> list[bool]:
    """True per letter when it acts as a consonant ('y' flips on its neighbour)."""
    flags: list[bool] = []
    for i, c in enumerate(word):
        if c in "aeiou":
            flags.append(False)
        elif c == "y":
            flags.append(True if i == 0 else not flags[i - 1])
        else:
            flags.append(True)
    return flags


def _measure(stem: str) -> int:
    flags = _cons_flags(stem)
    m = 0
    prev = None
    for f in flags:
        if prev is False and f is True:
            m += 1
        prev = f
    return m


def _has_vowel(stem: str) -> bool:
    return not all(_cons_flags(stem))


def _ends_double_consonant(word: str) -> bool:
    return len(word) >= 2 and word[-1] == word[-2] and _cons_flags(word)[-1]


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    flags = _cons_flags(word)
    return flags[-3] and not flags[-2] and flags[-1] and word[-1] not in "wxy"


def _apply_rules(word: str, rules, cond) -> str:
    # Longest matching suffix wins; a match blocks the rest of the step even
    # when its condition fails.
    for suffix, repl, extra in sorted(rules, key=lambda r: -len(r[0])):
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if cond(stem) and (extra is None or extra(stem)):
                return stem + repl
            return word
    return word


_STEP2 = [
    ("ational", "ate", None), ("tional", "tion", None), ("enci", "ence", None),
    ("anci", "ance", None), ("izer", "ize", None), ("abli", "able", None),
    ("alli", "al", None), ("entli", "ent", None), ("eli", "e", None),
    ("ousli", "ous", None), ("ization", "ize", None), ("ation", "ate", None),
    ("ator", "ate", None), ("alism", "al", None), ("iveness", "ive", None),
    ("fulness", "ful", None), ("ousness", "ous", None), ("aliti", "al", None),
    ("iviti", "ive", None), ("biliti", "ble", None),
]

_STEP3 = [
    ("icate", "ic", None), ("ative", "", None), ("alize", "al", None),
    ("iciti", "ic", None), ("ical", "ic", None), ("ful", "", None),
    ("ness", "", None),
]

_STEP4 = [
    ("al", "", None), ("ance", "", None), ("ence", "", None), ("er", "", None),
    ("ic", "", None), ("able", "", None), ("ible", "", None), ("ant", "", None),
    ("ement", "", None), ("ment", "", None), ("ent", "", None),
    ("ion", "", lambda stem: stem.endswith(("s", "t"))),
    ("ou", "", None), ("ism", "", None), ("ate", "", None), ("iti", "", None),
    ("ous", "", None), ("ive", "", None), ("ize", "", None),
]


def stem(word: str) -> str:
    if len(word) <= 2:
        return word

    # Step 1a: plurals.
    for suffix, repl in (("sses", "ss"), ("ies", "i"), ("ss", "ss"), ("s", "")):
        if word.endswith(suffix):
            word = word[: -len(suffix)] + repl
            break

    # Step 1b: -eed / -ed / -ing.
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    else:
        removed = False
        for suffix in ("ed", "ing"):
            if word.endswith(suffix) and _has_vowel(word[: -len(suffix)]):
                word = word[: -len(suffix)]
                removed = True
                break
        if removed:
            if word.endswith(("at", "bl", "iz")):
                word += "e"
            elif _ends_double_consonant(word) and word[-1] not in "lsz":
                word = word[:-1]
            elif _measure(word) == 1 and _ends_cvc(word):
                word += "e"

    # Step 1c: terminal y.
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    word = _apply_rules(word, _STEP2, lambda s: _measure(s) > 0)
    word = _apply_rules(word, _STEP3, lambda s: _measure(s) > 0)
    word = _apply_rules(word, _STEP4, lambda s: _measure(s) > 1)

    # Step 5a: terminal e.
    if word.endswith("e"):
        stem_ = word[:-1]
        m = _measure(stem_)
        if m > 1 or (m == 1 and not _ends_cvc(stem_)):
            word = stem_

    # Step 5b: -ll reduction.
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        word = word[:-1]

    return word
