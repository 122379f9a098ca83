def test_imports():
    from runner import main
    from src import (
        agent,
        config,
        critic,
        envs,
        errors,
        gdrc,
        harness,
        network,
        perturb,
        pipeline,
        seeding,
        sketch,
        theory,
    )

    assert main
    assert all([agent, config, critic, envs, errors, gdrc, harness, network, perturb, pipeline, seeding, sketch, theory])
