from setuptools import setup
setup(
    name='difflab',
    packages=['difflab', 'difflab.physics', 'difflab.sim', 'difflab.io'],
    version='0.3.0',
    description='Equilibrium statistical mechanics of diffusion models on exactly computable targets',
    keywords=['diffusion', 'score', 'statistical mechanics', 'phase transition', 'mean field', 'hopfield'],
    classifiers=[],
    python_requires='>=3.8',
    install_requires=['numpy', 'scipy', 'numba'],
    extras_require={'test': ['pytest']},
    entry_points={
        'console_scripts': [
            'difflab = difflab.main:main'
        ],
    },
)
