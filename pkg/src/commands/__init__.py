from commands import ablate, evaluate, export, gen, merge, mine, occlude, pipeline, train

# registration order is the order shown in --help
COMMANDS = [gen, pipeline, mine, train, evaluate, merge, occlude, export, ablate]
