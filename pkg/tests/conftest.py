from __future__ import annotations

from pathlib import Path

import pytest

from vpctrack.frames import SyntheticSceneSpec
from vpctrack.haar import load_cascade

CASCADE_DIR = Path(__file__).resolve().parent.parent / "src" / "vpctrack" / "cascades"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def face_model():
    return load_cascade(CASCADE_DIR / "synthetic_face.xml")


@pytest.fixture(scope="session")
def eye_model():
    return load_cascade(CASCADE_DIR / "synthetic_eye.xml")


@pytest.fixture()
def center_spec():
    return SyntheticSceneSpec(gaze_track=[(0, 0.5)])


# legacy-style minimal cascade: one stage, one stump, one two-rect feature
MINIMAL_LEGACY = """<?xml version="1.0"?>
<opencv_storage>
<tiny type_id="opencv-haar-classifier">
  <size>12 12</size>
  <stages>
    <_>
      <trees>
        <_>
          <_>
            <feature>
              <rects>
                <_>0 0 12 6 1.</_>
                <_>0 6 12 6 -1.</_>
              </rects>
              <tilted>0</tilted>
            </feature>
            <threshold>0.5</threshold>
            <left_val>-1.</left_val>
            <right_val>1.</right_val>
          </_>
        </_>
      </trees>
      <stage_threshold>0.</stage_threshold>
      <parent>-1</parent>
      <next>-1</next>
    </_>
  </stages>
</tiny>
</opencv_storage>
"""

# three stages of mixed stumps with mid-range thresholds, so random frames
# exercise both cascade outcomes and the short-circuit path
MINI3 = """<?xml version="1.0"?>
<opencv_storage>
<cascade type_id="opencv-cascade-classifier">
  <stageType>BOOST</stageType>
  <featureType>HAAR</featureType>
  <height>24</height>
  <width>24</width>
  <stageNum>3</stageNum>
  <stages>
    <_>
      <maxWeakCount>1</maxWeakCount>
      <stageThreshold>0.5</stageThreshold>
      <weakClassifiers>
        <_>
          <internalNodes>0 -1 0 0.0</internalNodes>
          <leafValues>-1.0 1.0</leafValues>
        </_>
      </weakClassifiers>
    </_>
    <_>
      <maxWeakCount>2</maxWeakCount>
      <stageThreshold>0.0</stageThreshold>
      <weakClassifiers>
        <_>
          <internalNodes>0 -1 1 -2.0</internalNodes>
          <leafValues>-1.0 1.0</leafValues>
        </_>
        <_>
          <internalNodes>0 -1 2 1.0</internalNodes>
          <leafValues>1.0 -1.0</leafValues>
        </_>
      </weakClassifiers>
    </_>
    <_>
      <maxWeakCount>1</maxWeakCount>
      <stageThreshold>0.5</stageThreshold>
      <weakClassifiers>
        <_>
          <internalNodes>0 -1 3 0.3</internalNodes>
          <leafValues>-1.0 1.0</leafValues>
        </_>
      </weakClassifiers>
    </_>
  </stages>
  <features>
    <_>
      <rects>
        <_>0 0 24 12 1.0</_>
        <_>0 12 24 12 -1.0</_>
      </rects>
      <tilted>0</tilted>
    </_>
    <_>
      <rects>
        <_>0 0 12 24 1.0</_>
        <_>12 0 12 24 -1.0</_>
      </rects>
      <tilted>0</tilted>
    </_>
    <_>
      <rects>
        <_>6 6 12 12 1.0</_>
        <_>0 0 24 24 -0.25</_>
      </rects>
      <tilted>0</tilted>
    </_>
    <_>
      <rects>
        <_>4 4 16 16 1.0</_>
        <_>0 0 24 24 -0.4444444444444444</_>
      </rects>
      <tilted>0</tilted>
    </_>
  </features>
</cascade>
</opencv_storage>
"""


@pytest.fixture(scope="session")
def mini3_model():
    from vpctrack.haar import parse_cascade

    return parse_cascade(MINI3)
