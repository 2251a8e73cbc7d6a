import pytest

from panosplat.cloud import init_background_cloud
from panosplat.fixtures import room_scene, two_plane_scene
from panosplat.pano import normals_from_depth


@pytest.fixture(scope="session")
def room_small():
    return room_scene(128, 64)


@pytest.fixture(scope="session")
def room_small_cloud(room_small):
    normals = normals_from_depth(room_small.depth)
    return init_background_cloud(room_small.panorama, room_small.depth, normals)


@pytest.fixture(scope="session")
def room_medium():
    return room_scene(256, 128)


@pytest.fixture(scope="session")
def room_medium_cloud(room_medium):
    normals = normals_from_depth(room_medium.depth)
    return init_background_cloud(room_medium.panorama, room_medium.depth, normals)


@pytest.fixture(scope="session")
def twoplane():
    return two_plane_scene(256, 128)


@pytest.fixture(scope="session")
def twoplane_cloud(twoplane):
    normals = normals_from_depth(twoplane.depth)
    return init_background_cloud(twoplane.panorama, twoplane.depth, normals)
