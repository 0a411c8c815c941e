from parabolic.runner import RunCommand


class Command(RunCommand):
    help = 'Sign feedback closed loop with the sliding continuation'
    command = 'slide'
