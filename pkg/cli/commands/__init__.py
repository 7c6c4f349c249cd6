from cli.commands import bench, cluster, evaluate, gradcheck, run, segment, synth, voxelize

# order shown in --help
COMMANDS = (synth, voxelize, segment, cluster, evaluate, gradcheck, bench, run)
