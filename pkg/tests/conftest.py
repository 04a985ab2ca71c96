import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hmatfem import fem
from hmatfem.mesh import GradingSpec, generate_mesh

settings.register_profile(
    "repo", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

CORNER = np.array([[0.5, 0.5]])


def graded_lshape(H, alpha=5.0):
    return generate_mesh("lshape", grading=GradingSpec(CORNER, alpha, H))


@pytest.fixture(scope="session")
def square_small():
    return generate_mesh("unit_square", uniform_width=0.25)


@pytest.fixture(scope="session")
def square_mid():
    return generate_mesh("unit_square", uniform_width=0.1)


@pytest.fixture(scope="session")
def lshape_small():
    # N = 197
    return graded_lshape(0.37)


@pytest.fixture(scope="session")
def lshape_500():
    return graded_lshape(0.23)


@pytest.fixture(scope="session")
def lshape_2000():
    return graded_lshape(0.115)


@pytest.fixture(scope="session")
def system_small(lshape_small):
    A, dofmap = fem.assemble_system(lshape_small, fem.Coefficients.paper_s4())
    dual = fem.build_dual_system(lshape_small, dofmap)
    return A, dofmap, dual


@pytest.fixture(scope="session")
def desk_problem(lshape_2000):
    """Graded L-shape with N = 2043, its tree and block partition."""
    from hmatfem import clustering

    A, dofmap = fem.assemble_system(lshape_2000, fem.Coefficients.paper_s4())
    dual = fem.build_dual_system(lshape_2000, dofmap)
    tree = clustering.build_cluster_tree(lshape_2000, dual, 25)
    part = clustering.build_block_partition(tree, 2.0)
    return A, dofmap, dual, tree, part


@pytest.fixture(scope="session")
def partition_small(system_small):
    from hmatfem import clustering

    A, dofmap, dual = system_small
    tree = clustering.build_cluster_tree(dual.mesh, dual, 25)
    return tree, clustering.build_block_partition(tree, 2.0)
