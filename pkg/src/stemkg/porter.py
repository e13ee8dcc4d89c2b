"""Porter (1980) suffix-stripping stemmer.

Follows the ANSI C reference release from tartarus.org, including its two
departures from the published algorithm (``-bli`` -> ``-ble`` instead of
``-abli`` -> ``-able``, and the extra ``-logi`` -> ``-log`` rule in step 2)
and the rule that words of one or two letters are left alone. With these
the output agrees with the reference ``voc.txt``/``output.txt`` pair.
"""

from functools import lru_cache

_VOWELS = frozenset("aeiou")


def _is_cons(word, i):
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_cons(word, i - 1)
    return True


def _measure(stem):
    """Number of VC sequences in ``stem`` ([C](VC)^m[V])."""
    n = 0
    prev_vowel = False
    for i in range(len(stem)):
        cons = _is_cons(stem, i)
        if cons and prev_vowel:
            n += 1
        prev_vowel = not cons
    return n


def _has_vowel(stem):
    return any(not _is_cons(stem, i) for i in range(len(stem)))


def _ends_double_cons(word):
    return len(word) >= 2 and word[-1] == word[-2] and _is_cons(word, len(word) - 1)


def _cvc(word):
    i = len(word) - 1
    if i < 2 or not _is_cons(word, i) or _is_cons(word, i - 1) or not _is_cons(word, i - 2):
        return False
    return word[i] not in "wxy"


def _step1ab(w):
    if w.endswith("s"):
        if w.endswith("sses"):
            w = w[:-2]
        elif w.endswith("ies"):
            w = w[:-2]
        elif not w.endswith("ss"):
            w = w[:-1]

    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
        return w

    for suffix in ("ed", "ing"):
        if w.endswith(suffix) and _has_vowel(w[: -len(suffix)]):
            w = w[: -len(suffix)]
            break
    else:
        return w

    if w.endswith(("at", "bl", "iz")):
        return w + "e"
    if _ends_double_cons(w):
        return w if w[-1] in "lsz" else w[:-1]
    if _measure(w) == 1 and _cvc(w):
        return w + "e"
    return w


def _step1c(w):
    if w.endswith("y") and _has_vowel(w[:-1]):
        return w[:-1] + "i"
    return w


# Within each step the first matching suffix wins, whether or not its
# measure condition then holds.
_STEP2 = (
    ("ational", "ate"), ("tional", "tion"),
    ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"),
    ("bli", "ble"), ("alli", "al"), ("entli", "ent"), ("eli", "e"), ("ousli", "ous"),
    ("ization", "ize"), ("ation", "ate"), ("ator", "ate"),
    ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"), ("ousness", "ous"),
    ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ("logi", "log"),
)

_STEP3 = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"),
    ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""),
    ("ness", ""),
)

_STEP4 = (
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent",
    "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
)


def _replace_first(w, rules, min_measure):
    for suffix, repl in rules:
        if w.endswith(suffix):
            stem = w[: -len(suffix)]
            if _measure(stem) > min_measure:
                return stem + repl
            return w
    return w


def _step4(w):
    for suffix in _STEP4:
        if not w.endswith(suffix):
            continue
        stem = w[: -len(suffix)]
        if suffix == "ion" and not (stem and stem[-1] in "st"):
            # "-ion" without a preceding s/t falls through to "-ou", which
            # cannot match a word ending in "n".
            return w
        return stem if _measure(stem) > 1 else w
    return w


def _step5(w):
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _cvc(stem)):
            w = stem
    if w.endswith("ll") and _measure(w) > 1:
        w = w[:-1]
    return w


@lru_cache(maxsize=1 << 17)
def porter_stem(word: str) -> str:
    """Stem a lowercase alphabetic word. Anything else is returned unchanged."""
    if len(word) <= 2 or not (word.isascii() and word.isalpha() and word.islower()):
        return word
    w = _step1ab(word)
    w = _step1c(w)
    w = _replace_first(w, _STEP2, 0)
    w = _replace_first(w, _STEP3, 0)
    w = _step4(w)
    return _step5(w)
