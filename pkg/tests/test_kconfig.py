import gzip

from hypothesis import given
from hypothesis import strategies as hs

from firmsec.kconfig import (
    IKCFG_END,
    IKCFG_START,
    ConfigState,
    extract_ikconfig,
    looks_like_kconfig,
    normalize_option,
    parse_kconfig,
)

SAMPLE = """\
#
# Automatically generated file; DO NOT EDIT.
#
CONFIG_ARM=y
CONFIG_MODULES=y
CONFIG_CC_STACKPROTECTOR=m
# CONFIG_RANDOMIZE_BASE is not set
CONFIG_CMDLINE="console=ttyS0"
CONFIG_NR_CPUS=4
CONFIG_SLAB_FREELIST_RANDOM=n
this is not a config line
"""


def test_states():
    cfg = parse_kconfig(SAMPLE)
    assert cfg["CONFIG_ARM"] is ConfigState.SET
    assert cfg.is_set("CC_STACKPROTECTOR")  # =m counts as set
    assert cfg["CONFIG_RANDOMIZE_BASE"] is ConfigState.UNSET
    assert cfg.is_set("CONFIG_CMDLINE") and cfg.is_set("CONFIG_NR_CPUS")
    assert cfg["CONFIG_SLAB_FREELIST_RANDOM"] is ConfigState.UNSET
    assert cfg.values["CONFIG_NR_CPUS"] == "4"


def test_absent_option_reads_unset():
    cfg = parse_kconfig(SAMPLE)
    assert "CONFIG_HARDENED_USERCOPY" not in cfg
    assert cfg.lookup("CONFIG_HARDENED_USERCOPY") is ConfigState.UNSET


def test_malformed_lines_are_warned_not_fatal():
    cfg = parse_kconfig(SAMPLE)
    assert [w.lineno for w in cfg.warnings] == [11]


def test_last_assignment_wins():
    cfg = parse_kconfig("CONFIG_X=y\n# CONFIG_X is not set\n")
    assert cfg["CONFIG_X"] is ConfigState.UNSET
    cfg = parse_kconfig("# CONFIG_X is not set\nCONFIG_X=y\n")
    assert cfg["CONFIG_X"] is ConfigState.SET


def test_normalize_option():
    assert normalize_option("FOO") == "CONFIG_FOO"
    assert normalize_option("CONFIG_FOO") == "CONFIG_FOO"


def test_ikconfig_recovery():
    blob = b"\x00junk" + IKCFG_START + gzip.compress(SAMPLE.encode()) + IKCFG_END + b"tail"
    assert extract_ikconfig(blob) == SAMPLE
    assert extract_ikconfig(b"nothing here") is None


def test_sniff():
    assert looks_like_kconfig(SAMPLE)
    assert not looks_like_kconfig("hello\nworld\n")


@given(hs.dictionaries(hs.from_regex(r"[A-Z][A-Z0-9_]{0,20}", fullmatch=True),
                       hs.sampled_from(["y", "m", "n", None, "42", '"s"'])))
def test_parse_matches_generated_config(options):
    lines = [f"# CONFIG_{k} is not set" if v is None else f"CONFIG_{k}={v}" for k, v in options.items()]
    cfg = parse_kconfig("\n".join(lines))
    for k, v in options.items():
        expected = ConfigState.UNSET if v in (None, "n") else ConfigState.SET
        assert cfg.lookup(k) is expected
