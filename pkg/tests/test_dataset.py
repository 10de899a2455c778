import numpy as np
import pytest

from counterattack.errors import DatasetFormatError
from dataset import Dataset, Split, generate_blobs, load_csv_dataset, write_csv_dataset


def test_blobs_without_noise_equal_templates():
    anchor_fit, test = generate_blobs(3, (2, 2, 2), 0.0, 2, 3, seed=4)
    assert len(anchor_fit) == 6
    assert len(test) == 9
    for k in range(3):
        members = np.concatenate([anchor_fit.images[anchor_fit.labels == k], test.images[test.labels == k]])
        assert np.all(members == members[0])
        assert np.all((members[0] >= 0.2) & (members[0] <= 0.8))


def test_blobs_are_deterministic_per_seed():
    a_fit, a_test = generate_blobs(4, (3, 4, 4), 0.05, 3, 3, seed=1)
    b_fit, b_test = generate_blobs(4, (3, 4, 4), 0.05, 3, 3, seed=1)
    _, c_test = generate_blobs(4, (3, 4, 4), 0.05, 3, 3, seed=2)
    assert np.array_equal(a_fit.images, b_fit.images)
    assert np.array_equal(a_test.images, b_test.images)
    assert not np.array_equal(a_test.images, c_test.images)
    assert a_test.split is Split.TEST
    assert set(a_test.labels) == {0, 1, 2, 3}


@pytest.mark.parametrize("args", [
    (1, (1, 2, 2), 0.1, 1, 1),
    (3, (1, 2, 2), 0.1, 0, 1),
    (3, (1, 2, 2), -0.1, 1, 1),
    (3, (1, 0, 2), 0.1, 1, 1),
])
def test_blobs_reject_invalid_sizes(args):
    with pytest.raises(ValueError):
        generate_blobs(*args, seed=0)


def test_dataset_invariants():
    images = np.full((2, 1, 1, 2), 0.5)
    with pytest.raises(ValueError):
        Dataset(images, np.array([0, 3]), Split.TEST, 3)
    with pytest.raises(ValueError):
        Dataset(images + 1.0, np.array([0, 1]), Split.TEST, 3)
    with pytest.raises(ValueError):
        Dataset(images[:0], np.array([], dtype=int), Split.TEST, 3)


def test_csv_round_trip_is_exact(tmp_path):
    _, test = generate_blobs(3, (2, 3, 1), 0.1, 1, 2, seed=9)
    path = tmp_path / "test.csv"
    write_csv_dataset(test, path)
    loaded = load_csv_dataset(path, class_count=3)
    assert loaded.image_shape == (2, 3, 1)
    assert np.array_equal(loaded.images, test.images)
    assert np.array_equal(loaded.labels, test.labels)


def test_two_row_file(tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("label,p0,p1\n0,0.1,0.2\n1,0.9,1.0\n", encoding="utf-8")
    dataset = load_csv_dataset(path)
    assert len(dataset) == 2
    assert dataset.image_shape == (1, 1, 2)
    np.testing.assert_array_equal(dataset.labels, [0, 1])


def test_out_of_range_pixel_reports_line_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,p0,p1\n0,0.1,0.2\n1,0.3,1.5\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError) as excinfo:
        load_csv_dataset(path)
    assert excinfo.value.line == 3
    assert excinfo.value.column == 2


@pytest.mark.parametrize("body,line", [
    ("label,p0,p1\n0,0.1\n", 2),
    ("label,p0,p1\nx,0.1,0.2\n", 2),
    ("label,p0,p1\n0,0.1,abc\n", 2),
    ("pixel,p0\n0,0.1\n", 1),
    ("label,p0,p1\n", 2),
])
def test_malformed_files_report_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(DatasetFormatError) as excinfo:
        load_csv_dataset(path)
    assert excinfo.value.line == line


def test_label_outside_class_count(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("label,p0\n0,0.1\n5,0.2\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_csv_dataset(path, class_count=3)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv_dataset(tmp_path / "nope.csv")


def test_shape_header_gives_image_tensors(tmp_path):
    path = tmp_path / "shaped.csv"
    path.write_text("# shape=1,2,2\nlabel,p0,p1,p2,p3\n0,0.1,0.2,0.3,0.4\n1,0.5,0.6,0.7,0.8\n", encoding="utf-8")
    dataset = load_csv_dataset(path)
    assert dataset.image_shape == (1, 2, 2)
    assert dataset.images.dtype == np.float64
    np.testing.assert_allclose(dataset.images[0, 0], [[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_allclose(dataset.images[1, 0, 1], [0.7, 0.8])


def test_shape_header_must_match_pixel_columns(tmp_path):
    path = tmp_path / "mismatch.csv"
    path.write_text("# shape=1,3,2\nlabel,p0,p1,p2,p3\n0,0.1,0.2,0.3,0.4\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_csv_dataset(path)
