"""Independent reference implementations used by the test suite.

Nothing here imports medledger. Formulas are nested tuples:
``("attr", name)``, ``("and", kids)``, ``("or", kids)``, ``("any", k, kids)``.
"""

import itertools
import random


def render(f):
    """Fully parenthesised text for a tuple formula."""
    tag = f[0]
    if tag == "attr":
        return f[1]
    if tag == "any":
        return f"ANY {f[1]} OF (" + ", ".join(render(c) for c in f[2]) + ")"
    op = " AND " if tag == "and" else " OR "
    return "(" + op.join(render(c) for c in f[1]) + ")"


def truth(f, held):
    tag = f[0]
    if tag == "attr":
        return f[1] in held
    kids = f[-1]
    votes = [truth(c, held) for c in kids]
    if tag == "and":
        return False not in votes
    if tag == "or":
        return True in votes
    return votes.count(True) >= f[1]


def names(f):
    if f[0] == "attr":
        return {f[1]}
    return set().union(*(names(c) for c in f[-1]))


def random_formula(rng, alphabet, max_leaves, depth=0):
    """A random tuple formula with at most ``max_leaves`` leaves."""
    if max_leaves < 2 or depth >= 4 or rng.random() < 0.3:
        return ("attr", rng.choice(alphabet))
    arity = rng.randint(2, min(4, max_leaves))
    budget = [1] * arity
    for _ in range(max_leaves - arity):
        if rng.random() < 0.5:
            budget[rng.randrange(arity)] += 1
    kids = tuple(random_formula(rng, alphabet, b, depth + 1) for b in budget)
    tag = rng.choice(["and", "or", "any"])
    if tag == "any":
        return ("any", rng.randint(1, arity), kids)
    return (tag, kids)


def leaf_count(f):
    return 1 if f[0] == "attr" else sum(leaf_count(c) for c in f[-1])


def formula_corpus(n=200, seed=2024, max_leaves=10):
    rng = random.Random(seed)
    alphabet = [f"a{i}" for i in range(10)]
    return [random_formula(rng, alphabet, rng.randint(1, max_leaves)) for _ in range(n)]


def assignments(atoms):
    """Every subset of ``atoms``, as frozensets."""
    atoms = sorted(atoms)
    for bits in itertools.product((False, True), repeat=len(atoms)):
        yield frozenset(a for a, b in zip(atoms, bits) if b)


def mod_inverse(x, q):
    for y in range(1, q):
        if x * y % q == 1:
            return y
    raise ValueError(f"{x} has no inverse mod {q}")


_LEAF_SKIP = (type, type(len), type(lambda: 0), type(random))


def reachable(root, limit=2_000_000):
    """Every bytes and int value reachable from ``root`` through attributes and containers."""
    seen, found, stack = set(), [], [root]
    while stack and len(seen) < limit:
        obj = stack.pop()
        if id(obj) in seen or isinstance(obj, _LEAF_SKIP):
            continue
        seen.add(id(obj))
        if isinstance(obj, (bytes, bytearray, memoryview)):
            found.append(bytes(obj))
        elif isinstance(obj, bool) or obj is None or isinstance(obj, (str, float)):
            continue
        elif isinstance(obj, int):
            found.append(obj)
        elif isinstance(obj, dict):
            stack.extend(obj.keys())
            stack.extend(obj.values())
        elif isinstance(obj, (list, tuple, set, frozenset)):
            stack.extend(obj)
        else:
            d = getattr(obj, "__dict__", None)
            if d is not None:
                stack.extend(d.values())
            for slot in getattr(type(obj), "__slots__", ()):
                if hasattr(obj, slot):
                    stack.append(getattr(obj, slot))
    return found
