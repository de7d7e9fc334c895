"""Whole-region crop extraction, multi-region labels, and input transforms."""

import numpy as np
import pytest

from nisslkit.errors import AnnotationError, NisslkitError
from nisslkit.geometry import BBox, Polygon, SizeFilter
from nisslkit.nomenclature import MergePolicy, build_tree
from nisslkit.regions import (
    CROP_EXACT,
    CROP_EXACT_MASKED,
    CROP_SQUARE,
    CropConfig,
    RegionImageRecord,
    assign_multi_region_labels,
    extract_region_images,
    multi_labels_for_bbox,
    pad_to_square,
)
from nisslkit.sections import AnnotatedSection, RegionAnnotation, load_image_array

from conftest import oracle_points_in_rings


def rect(x0, y0, x1, y1):
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def flat_tree(names):
    return build_tree([{"id": n, "name": n} for n in names])


def make_section(regions, width=600, height=600, resolution=16.0, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(1, 255, (height, width), dtype=np.uint8)
    return AnnotatedSection(
        section_id="sec-1", width=width, height=height,
        resolution_um_per_px=resolution,
        regions=regions, image=image)


PASS_ALL = SizeFilter(0.0, 0.0)


class TestExtraction:
    def test_single_blob_all_kinds_gives_four_records(self, tmp_path):
        section = make_section([RegionAnnotation("hippocampus", rect(100, 100, 260, 220))])
        records = extract_region_images(
            section, flat_tree(["hippocampus"]), MergePolicy(),
            PASS_ALL, 50.0, CropConfig(), tmp_path)
        assert len(records) == 4
        assert all(r.part is None for r in records)
        kinds = sorted((r.crop_kind, r.square_min_dim) for r in records)
        assert kinds == [
            (CROP_EXACT, None), (CROP_EXACT_MASKED, None),
            (CROP_SQUARE, 224), (CROP_SQUARE, 336)]
        exact = next(r for r in records if r.crop_kind == CROP_EXACT)
        assert (exact.bbox.width, exact.bbox.height) == (160, 120)
        for r in records:
            img = load_image_array(tmp_path / r.image_path)
            assert img.shape == (int(r.bbox.height), int(r.bbox.width))

    def test_two_distant_groups_get_part_numbers(self, tmp_path):
        section = make_section([
            RegionAnnotation("tract", rect(10, 10, 80, 80)),
            RegionAnnotation("tract", rect(400, 400, 480, 490)),
        ])
        records = extract_region_images(
            section, flat_tree(["tract"]), MergePolicy(),
            PASS_ALL, 50.0, CropConfig(kinds=(CROP_EXACT,)), tmp_path)
        assert [r.part for r in records] == [1, 2]
        assert records[0].primary_caption() == "tract part 1"
        # parts ordered spatially (top-left group first)
        assert records[0].bbox.y0 < records[1].bbox.y0

    def test_nearby_groups_merge_into_one_record(self, tmp_path):
        section = make_section([
            RegionAnnotation("tract", rect(10, 10, 80, 80)),
            RegionAnnotation("tract", rect(90, 10, 160, 80)),  # 10 px gap
        ])
        records = extract_region_images(
            section, flat_tree(["tract"]), MergePolicy(),
            PASS_ALL, 50.0, CropConfig(kinds=(CROP_EXACT,)), tmp_path)
        assert len(records) == 1
        assert records[0].part is None
        assert records[0].bbox == BBox(10, 10, 160, 80)

    def test_sliver_filtered_out(self, tmp_path):
        section = make_section([RegionAnnotation("thin", rect(10, 10, 510, 12))])
        records = extract_region_images(
            section, flat_tree(["thin"]), MergePolicy(),
            SizeFilter(min_area=100, min_area_perimeter_ratio=5.0),
            50.0, CropConfig(), tmp_path)
        assert records == []

    def test_excluded_region_emits_nothing(self, tmp_path):
        tree = flat_tree(["ventricle"])
        policy = MergePolicy(excluded_roots=("ventricle",))
        section = make_section([RegionAnnotation("ventricle", rect(50, 50, 300, 300))])
        records = extract_region_images(
            section, tree, policy, PASS_ALL, 50.0, CropConfig(), tmp_path)
        assert records == []

    def test_mask_zeroes_pixels_outside_polygon(self, tmp_path):
        # L-shaped region: mask must zero the crop pixels outside it
        poly = Polygon([(100, 100), (300, 100), (300, 200), (200, 200),
                        (200, 300), (100, 300)])
        section = make_section([RegionAnnotation("hc", poly)])
        records = extract_region_images(
            section, flat_tree(["hc"]), MergePolicy(),
            PASS_ALL, 50.0, CropConfig(kinds=(CROP_EXACT_MASKED,)), tmp_path)
        (rec,) = records
        assert rec.mask_path is not None
        crop = load_image_array(tmp_path / rec.image_path)
        xs = rec.bbox.x0 + 0.5 + np.arange(int(rec.bbox.width))
        ys = rec.bbox.y0 + 0.5 + np.arange(int(rec.bbox.height))
        gx, gy = np.meshgrid(xs, ys)
        inside = oracle_points_in_rings(gx, gy, poly.rings)
        assert (crop[~inside] == 0).all()
        assert (crop[inside] > 0).all()   # source image was 1..254

    def test_resolution_mismatch_rejected(self, tmp_path):
        section = make_section([RegionAnnotation("hc", rect(0, 0, 50, 50))],
                               resolution=2.0)
        with pytest.raises(AnnotationError, match="resolution"):
            extract_region_images(section, flat_tree(["hc"]), MergePolicy(),
                                  PASS_ALL, 50.0, CropConfig(), tmp_path)

    def test_merged_label_combines_leaf_regions(self, tmp_path):
        tree = build_tree([
            {"id": "hippocampus", "name": "Hippocampus"},
            {"id": "ca1", "name": "CA1", "parent": "hippocampus"},
            {"id": "ca3", "name": "CA3", "parent": "hippocampus"},
        ])
        from nisslkit.nomenclature import MergeAnchor
        policy = MergePolicy(anchors=(MergeAnchor("hippocampus", 0),))
        section = make_section([
            RegionAnnotation("ca1", rect(100, 100, 200, 200)),
            RegionAnnotation("ca3", rect(210, 100, 310, 200)),
        ])
        records = extract_region_images(
            section, tree, policy, PASS_ALL, 50.0,
            CropConfig(kinds=(CROP_EXACT,)), tmp_path)
        (rec,) = records
        assert rec.label == "Hippocampus"
        assert rec.bbox == BBox(100, 100, 310, 200)


class TestMultiRegionLabels:
    def test_fully_included_neighbor(self):
        labeled = {"main": [rect(0, 0, 100, 100)],
                   "friend": [rect(120, 120, 160, 160)]}
        out = multi_labels_for_bbox(BBox(0, 0, 300, 300), "main", labeled)
        assert out == ("main", "friend")

    def test_79_percent_excluded(self):
        # 79 of 100 columns inside the bbox
        labeled = {"main": [rect(0, 0, 100, 100)],
                   "friend": [rect(221, 0, 321, 100)]}
        out = multi_labels_for_bbox(BBox(0, 0, 300, 300), "main", labeled)
        assert out == ("main",)

    def test_exactly_80_percent_excluded_strictly(self):
        labeled = {"friend": [rect(220, 0, 320, 100)]}  # 80/100 columns inside
        out = multi_labels_for_bbox(BBox(0, 0, 300, 300), "main", labeled)
        assert out == ("main",)

    def test_just_above_80_percent_included(self):
        labeled = {"friend": [rect(219, 0, 319, 100)]}  # 81/100 columns inside
        out = multi_labels_for_bbox(BBox(0, 0, 300, 300), "main", labeled)
        assert out == ("main", "friend")

    def test_ordering_by_inclusion_then_name(self):
        labeled = {
            "a95": [rect(295, 0, 395, 100)],    # 95 of 100 columns inside
            "b85": [rect(305, 200, 405, 300)],  # 85 of 100 columns inside
            "c50": [rect(340, 400, 440, 500)],  # 50 of 100 columns inside
        }
        out = multi_labels_for_bbox(BBox(0, 0, 390, 500), "main", labeled)
        assert out == ("main", "a95", "b85")

    def test_pixel_count_inclusion_oracle(self):
        # inclusion fraction agrees with mask pixel counting on an irregular shape
        poly = Polygon([(50, 50), (150, 50), (150, 90), (100, 90), (100, 150), (50, 150)])
        bbox = BBox(0, 0, 120, 160)
        labeled = {"n": [poly]}
        xs = 0.5 + np.arange(200, dtype=np.float64)
        gx, gy = np.meshgrid(xs, xs)
        inside = oracle_points_in_rings(gx, gy, poly.rings)
        in_bbox = inside & (gx < 120) & (gy < 160)
        frac = in_bbox.sum() / inside.sum()
        out = multi_labels_for_bbox(bbox, "main", labeled, threshold=frac - 0.01)
        assert out == ("main", "n")
        out = multi_labels_for_bbox(bbox, "main", labeled, threshold=frac + 0.01)
        assert out == ("main",)

    def test_op_requires_square_kind(self):
        rec = RegionImageRecord(
            section_id="s", label="main", part=None, crop_kind=CROP_EXACT,
            bbox=BBox(0, 0, 10, 10), resolution_um_per_px=16.0)
        with pytest.raises(NisslkitError):
            assign_multi_region_labels(rec, {})

    def test_op_on_square_record(self):
        rec = RegionImageRecord(
            section_id="s", label="main", part=None, crop_kind=CROP_SQUARE,
            bbox=BBox(0, 0, 300, 300), resolution_um_per_px=16.0)
        labeled = {"main": [rect(0, 0, 100, 100)], "n": [rect(150, 150, 250, 250)]}
        assert assign_multi_region_labels(rec, labeled) == ["main", "n"]


class TestRecord:
    def test_multi_labels_default_to_primary(self):
        rec = RegionImageRecord("s", "x", None, CROP_EXACT, BBox(0, 0, 1, 1), 16.0)
        assert rec.multi_labels == ("x",)

    def test_primary_must_lead_multi_labels(self):
        with pytest.raises(NisslkitError):
            RegionImageRecord("s", "x", None, CROP_EXACT, BBox(0, 0, 1, 1), 16.0,
                              multi_labels=("y", "x"))

    def test_caption_rendering(self):
        rec = RegionImageRecord("s", "Corticofugal tract", 2, CROP_SQUARE,
                                BBox(0, 0, 1, 1), 16.0,
                                multi_labels=("Corticofugal tract", "Pons"))
        assert rec.caption() == "Corticofugal tract part 2"
        assert rec.caption(multi=True) == "Corticofugal tract part 2; Pons"

    def test_json_round_trip(self):
        rec = RegionImageRecord("s", "x", 1, CROP_SQUARE, BBox(1, 2, 3, 4), 16.0,
                                multi_labels=("x", "y"), image_path="crops/a.png",
                                square_min_dim=224)
        assert RegionImageRecord.from_json(rec.to_json()) == rec


class TestPadToSquare:
    def test_identity(self):
        img = (np.arange(224 * 224, dtype=np.uint8).reshape(224, 224) % 251) + 1
        assert np.array_equal(pad_to_square(img, 224), img)

    def test_narrow_image_centered_with_zero_bands(self):
        img = np.full((224, 100), 7, np.uint8)
        out = pad_to_square(img, 224)
        assert out.shape == (224, 224)
        assert (out[:, :62] == 0).all()
        assert (out[:, 62:162] == 7).all()
        assert (out[:, 162:] == 0).all()

    def test_wide_image_downscaled_then_padded(self):
        img = np.full((224, 448), 9, np.uint8)
        out = pad_to_square(img, 224)
        assert out.shape == (224, 224)
        rows = np.nonzero(out.any(axis=1))[0]
        assert rows.min() == 56 and rows.max() == 167   # 112 rows centered
        assert (out[56:168, :] == 9).all()              # bicubic keeps constants

    def test_three_channel_padding_zero_in_all_channels(self):
        img = np.full((100, 224, 3), 5, np.uint8)
        out = pad_to_square(img, 224)
        assert out.shape == (224, 224, 3)
        assert (out[:62] == 0).all() and (out[162:] == 0).all()

    def test_pixel_mass_preserved_without_downscale(self):
        rng = np.random.default_rng(3)
        img = rng.integers(1, 255, (150, 90), dtype=np.uint8)
        out = pad_to_square(img, 224)
        assert int(out.sum()) == int(img.sum())
        assert int((out != 0).sum()) == img.size

    def test_empty_image_rejected(self):
        with pytest.raises(NisslkitError):
            pad_to_square(np.zeros((0, 5), dtype=np.uint8), 224)
