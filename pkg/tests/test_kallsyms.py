import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as hs

from firmsec.kallsyms import KallsymsNotFound, encode_names, extract_kallsyms, locate_kallsyms
from kallsyms_builder import build_image, random_symbol

LAYOUTS = [
    dict(word=4, endian="<", marker_width=4),
    dict(word=8, endian="<", marker_width=8),
    dict(word=4, endian=">", marker_width=4),
    dict(word=8, endian=">", marker_width=4),
]


@pytest.mark.parametrize("seed", range(24))
def test_random_tables_round_trip(seed):
    rng = random.Random(seed)
    names = [random_symbol(rng) for _ in range(rng.randint(20, 900))]
    img, blob, full = build_image(names, rng=rng, **LAYOUTS[seed % len(LAYOUTS)])
    table = locate_kallsyms(img)
    assert table.names == names
    assert table.names_blob == blob
    assert list(table.full_names) == full
    assert encode_names(table.full_names, table.tokens) == blob


def test_two_symbol_example():
    img, _, _ = build_image(["__stack_chk_fail", "start_kernel"], types=["T", "T"])
    assert extract_kallsyms(img) == ["__stack_chk_fail", "start_kernel"]


def test_types_are_recovered():
    img, _, _ = build_image(["a_sym", "b_sym", "c_data"], types=["T", "t", "D"])
    assert locate_kallsyms(img).types == ["T", "t", "D"]


def test_long_names_use_two_byte_length():
    rng = random.Random(7)
    names = ["".join(rng.choice("abcdefghijklmnopqrstuvwxyz_0123456789") for _ in range(300))
             for _ in range(30)]
    img, _, _ = build_image(names, rng=rng)
    assert extract_kallsyms(img) == names


@pytest.mark.parametrize("seed", range(5))
def test_random_bytes_not_found(seed):
    data = random.Random(seed).randbytes(1 << 18)
    with pytest.raises(KallsymsNotFound):
        locate_kallsyms(data)


def test_zero_image_not_found():
    with pytest.raises(KallsymsNotFound):
        locate_kallsyms(bytes(1 << 16))


@settings(max_examples=25, deadline=None)
@given(hs.lists(hs.from_regex(r"[a-z_][a-z0-9_]{2,24}", fullmatch=True), min_size=20, max_size=120),
       hs.sampled_from(LAYOUTS))
def test_round_trip_property(names, layout):
    # real token tables are never near-empty; the locator requires a populated one
    assume(len(set("".join(names))) >= 12)
    img, blob, _ = build_image(names, **layout)
    table = locate_kallsyms(img)
    assert table.names == names
    assert table.names_blob == blob
