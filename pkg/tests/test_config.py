"""INI configuration parsing: layer grammar, defaults, typo rejection."""

import math

import pytest

from capsbeam.config import (
    DEFAULT_ANGLES_DEG,
    RunConfig,
    load_config,
    parse_config_text,
)
from capsbeam.errors import InvalidConfig, IoFailure

DESK = "configs/desk.ini"
DEFAULT = "configs/default.ini"


def test_desk_config_parses():
    cfg = load_config(DESK)
    assert cfg.probe.num_elements == 8
    assert cfg.grid.num_rows == 16 and cfg.grid.num_cols == 16
    assert cfg.angles_deg == (-0.86, -0.43, 0.0, 0.43, 0.86)
    assert cfg.phantom.scatterers == ((0.0, 5.8e-3, 1.0),)
    assert len(cfg.phantom.cyst_regions) == 1
    assert cfg.phantom.background_density_per_mm2 == 2.0
    assert cfg.phantom.rng_seed == 1234
    assert cfg.num_time_samples == 384
    assert cfg.capsnet.conv_layers[0].out_ch == 8
    assert cfg.capsnet.routing.num_in_capsules == 2
    assert cfg.capsnet.fc_layers[-1].out_features == 2
    assert cfg.mvdr.subarray_len == 4
    assert cfg.prune.ratio == 0.5
    assert cfg.quant.enabled is True
    assert cfg.accel.pe_rows == 4
    assert cfg.dynamic_range_db == 60.0
    assert len(cfg.config_hash) == 12
    assert cfg.region("target_in").name == "cyst"
    assert cfg.region("background_out").kind == "rectangle"


def test_default_config_matches_library_defaults():
    cfg = load_config(DEFAULT)
    base = RunConfig()
    assert cfg.probe == base.probe
    assert cfg.grid == base.grid
    assert cfg.capsnet == base.capsnet
    assert cfg.accel == base.accel
    assert cfg.angles_deg == DEFAULT_ANGLES_DEG


def test_empty_text_gives_defaults():
    cfg = parse_config_text("")
    base = RunConfig()
    assert cfg.probe == base.probe
    assert cfg.grid == base.grid
    assert cfg.capsnet == base.capsnet
    assert cfg.mvdr == base.mvdr
    assert cfg.prune == base.prune
    assert cfg.quant.enabled is False
    assert cfg.regions == ()
    assert cfg.dynamic_range_db == 60.0
    assert cfg.config_hash != "default"  # hash of the empty text, still pinned


def test_angles_rad_conversion():
    cfg = parse_config_text("[probe]\nangles_deg = -3, 0, 3\n")
    assert cfg.angles_deg == (-3.0, 0.0, 3.0)
    assert cfg.angles_rad == pytest.approx(
        (math.radians(-3.0), 0.0, math.radians(3.0)))


def test_partial_section_keeps_other_defaults():
    cfg = parse_config_text("[grid]\nnum_rows = 32\n")
    assert cfg.grid.num_rows == 32
    assert cfg.grid.num_cols == RunConfig().grid.num_cols
    assert cfg.grid.row_spacing_m == RunConfig().grid.row_spacing_m


def test_unknown_section_rejected():
    with pytest.raises(InvalidConfig, match="unknown config sections"):
        parse_config_text("[probie]\nnum_elements = 8\n")


def test_unknown_key_rejected():
    with pytest.raises(InvalidConfig, match="unknown keys"):
        parse_config_text("[probe]\nnum_element = 8\n")
    with pytest.raises(InvalidConfig, match="unknown keys"):
        parse_config_text("[quant]\nbits = 16\n")


def test_type_errors_report_section_and_key():
    with pytest.raises(InvalidConfig, match=r"\[probe\] num_elements"):
        parse_config_text("[probe]\nnum_elements = eight\n")
    with pytest.raises(InvalidConfig, match=r"\[grid\] row_spacing_m"):
        parse_config_text("[grid]\nrow_spacing_m = tiny\n")
    with pytest.raises(InvalidConfig, match=r"\[quant\] enabled"):
        parse_config_text("[quant]\nenabled = maybe\n")


def test_conv_layer_grammar():
    cfg = parse_config_text("[capsnet]\nconv = 5x5:2->4:linear, 3x3:4->4\n"
                            "caps = 1x1:4->2x2\nrouting = 2,2,2,2,1\nfc = 4,2\n")
    c0, c1 = cfg.capsnet.conv_layers
    assert (c0.kernel_h, c0.kernel_w, c0.in_ch, c0.out_ch) == (5, 5, 2, 4)
    assert c0.relu is False
    assert c1.relu is True  # activation defaults to relu
    caps = cfg.capsnet.caps_conv_layers[0]
    assert (caps.num_capsules, caps.capsule_dim, caps.out_ch) == (2, 2, 4)
    assert cfg.capsnet.routing.num_iterations == 1
    fc = cfg.capsnet.fc_layers
    assert [(l.in_features, l.out_features, l.relu) for l in fc] == [(4, 2, False)]


def test_fc_grammar_relu_on_all_but_last():
    cfg = parse_config_text("[capsnet]\nfc = 64,32,16,8,2\n")
    relus = [l.relu for l in cfg.capsnet.fc_layers]
    assert relus == [True, True, True, False]
    widths = [(l.in_features, l.out_features) for l in cfg.capsnet.fc_layers]
    assert widths == [(64, 32), (32, 16), (16, 8), (8, 2)]


@pytest.mark.parametrize("line", [
    "conv = 3x3-128->128",
    "conv = 3x:8->8",
    "conv = 3x3:8=>8",
    "conv = 3x3:8->8:sigmoid",
    "conv =",
    "caps = 3x3:8->8",
    "caps = 3x3:8->2x2:relu",
    "routing = 8,8,8,8",
    "routing = 8,8,8,8,three",
    "fc = 8",
])
def test_bad_layer_grammar_rejected(line):
    with pytest.raises(InvalidConfig):
        parse_config_text(f"[capsnet]\n{line}\n")


def test_inconsistent_network_rejected_at_parse():
    # conv output width must feed the caps stage input
    with pytest.raises(InvalidConfig):
        parse_config_text("[capsnet]\nconv = 3x3:8->8\ncaps = 3x3:9->2x4\n"
                          "routing = 2,4,2,4,3\nfc = 8,2\n")


def test_phantom_triples_arity_checked():
    with pytest.raises(InvalidConfig, match="expected 3 numbers"):
        parse_config_text("[phantom]\npoints = 0.0, 5.8e-3\n")
    with pytest.raises(InvalidConfig, match="expected 4 numbers"):
        parse_config_text("[phantom]\ncysts = 0.0, 5.8e-3, 5.0e-4\n")
    cfg = parse_config_text(
        "[phantom]\npoints = 0,1e-2,1; 1e-3,2e-2,0.5\n")
    assert cfg.phantom.scatterers == ((0.0, 1e-2, 1.0), (1e-3, 2e-2, 0.5))


def test_region_grammar_and_roles():
    cfg = parse_config_text(
        "[regions]\n"
        "cyst = circle(0.0, 1.65e-2, 4.0e-3) target_in\n"
        "bg = rectangle(-1.2e-2, 2.4e-2, 1.2e-2, 2.8e-2) background_out\n"
        "extra = circle(0.0, 1.0e-2, 1.0e-3)\n")
    assert len(cfg.regions) == 3
    assert cfg.region("target_in").params == (0.0, 1.65e-2, 4.0e-3)
    assert cfg.regions[2].role == ""
    with pytest.raises(InvalidConfig):
        cfg.region("no_such_role")
    with pytest.raises(InvalidConfig):
        parse_config_text("[regions]\ncyst = sphere(0, 0, 1)\n")
    with pytest.raises(InvalidConfig):
        parse_config_text("[regions]\ncyst = circle(0, 0) target_in\n")


def test_config_hash_tracks_text():
    a = parse_config_text("[grid]\nnum_rows = 32\n")
    b = parse_config_text("[grid]\nnum_rows = 33\n")
    assert a.config_hash != b.config_hash
    assert a.config_hash == parse_config_text("[grid]\nnum_rows = 32\n").config_hash


def test_prune_method_checked():
    with pytest.raises(InvalidConfig, match=r"\[prune\] method"):
        parse_config_text("[prune]\nmethod = random\n")
    cfg = parse_config_text("[prune]\nmethod = magnitude\nratio = 0.3\n")
    assert cfg.prune.method == "magnitude"
    assert cfg.prune.lookahead == 2


def test_missing_file_raises_io_failure():
    with pytest.raises(IoFailure):
        load_config("configs/nonexistent.ini")
