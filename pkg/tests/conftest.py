"""공용 pytest 픽스처 — 작은 인코더, 앵커, 이미지, 빠른 실험 설정, 골든 값 비교."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from counterattack.attack import AttackConfig
from counterattack.defense import CounterattackConfig, DefenseKind
from counterattack.encoder import EncoderKind, build_encoder
from counterattack.zeroshot import ClassAnchorSet
from experiment import DatasetSpec, EncoderSpec, ExperimentConfig

SHAPE = (3, 4, 4)
INPUT_DIM = 48
EMBED_DIM = 8
GOLDEN_DIR = Path(__file__).parent / "golden"


def pytest_addoption(parser):
    parser.addoption(
        "--update-golden",
        action="store_true",
        default=False,
        help="tests/golden 아래 기준값 파일을 현재 실행 결과로 다시 기록한다",
    )


@pytest.fixture
def shape():
    return SHAPE


@pytest.fixture
def linear_encoder():
    return build_encoder(EncoderKind.LINEAR, (INPUT_DIM, EMBED_DIM), seed=7)


@pytest.fixture
def mlp_encoder():
    return build_encoder(EncoderKind.MLP, (INPUT_DIM, 12, EMBED_DIM), seed=7)


@pytest.fixture(params=[EncoderKind.LINEAR, EncoderKind.MLP], ids=lambda k: k.value)
def encoder(request, linear_encoder, mlp_encoder):
    return linear_encoder if request.param is EncoderKind.LINEAR else mlp_encoder


@pytest.fixture
def anchors():
    rng = np.random.default_rng(3)
    return ClassAnchorSet(rng.standard_normal((4, EMBED_DIM)))


@pytest.fixture
def image():
    rng = np.random.default_rng(5)
    return rng.uniform(0.2, 0.8, size=SHAPE)


@pytest.fixture
def images():
    rng = np.random.default_rng(6)
    return [rng.uniform(0.1, 0.9, size=SHAPE) for _ in range(20)]


@pytest.fixture
def small_config(tmp_path):
    """몇 초 안에 끝나는 전체 파이프라인 설정."""
    return ExperimentConfig(
        dataset=DatasetSpec(class_count=3, shape=(1, 4, 4), noise_sigma=0.05,
                            n_anchor_per_class=6, n_test_per_class=4, seed=1),
        encoder=EncoderSpec(kind=EncoderKind.LINEAR, embed_dim=6, seed=7),
        attack=AttackConfig(eps_atk=8 / 255, steps=3, step_size=2 / 255, seed=11),
        defense=CounterattackConfig(eps_ca=4 / 255, steps=2, step_size=3 / 255, num_probes=3, seed=13),
        defense_kind=DefenseKind.DOC,
        calibration_size=6,
        output_dir=str(tmp_path / "run"),
        workers=1,
        stable_output=True,
    )


@pytest.fixture
def fixture_config(tmp_path):
    """config.yaml 기본값 그대로의 blob 실험 설정 (K=4, 8×8×3, 400개 테스트 예제)."""
    return replace(
        ExperimentConfig.from_defaults(),
        output_dir=str(tmp_path / "fixture"),
        workers=1,
        stable_output=True,
    )


@pytest.fixture
def golden(request):
    """실행 결과를 tests/golden/<name>.json 기준값과 비교한다.

    파일이 없거나 --update-golden이면 현재 값을 기록하고 비교는 건너뛴다.
    """
    update = request.config.getoption("--update-golden")

    def check(name: str, values: dict[str, float]) -> None:
        path = GOLDEN_DIR / f"{name}.json"
        if update or not path.exists():
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            return
        expected = json.loads(path.read_text(encoding="utf-8"))
        assert sorted(values) == sorted(expected)
        for key, value in expected.items():
            assert values[key] == pytest.approx(value, abs=1e-9), key

    return check
