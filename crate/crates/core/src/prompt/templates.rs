/// `(task id, description, question)` for every registered task.
pub const TEMPLATES: &[(&str, &str, &str)] = &[
    (
        "rel-event/user-attendance",
        "This task is to predict how many events each user will respond yes or maybe in the next seven days.",
        "What is the attendance of user? Give an integer as an answer.",
    ),
    (
        "rel-event/user-ignore",
        "This task is to predict whether a user will ignore more than 2 event invitations in the next 7 days.",
        "Given recent activity and event history, will this user ignore more than 2 event invitations in the next 7 days? Give Yes or No as an answer.",
    ),
    (
        "rel-event/user-repeat",
        "This task is to predict whether a user will attend an event (by responding yes or maybe) in the next 7 days if they have already attended an event in the last 14 days.",
        "Given recent activity and event history, will this user attend an event in the next 7 days? Give Yes or No as an answer.",
    ),
    (
        "rel-amazon/user-churn",
        "This task is to predict if the customer will review any product in the next 3 months or not.",
        "Based on the customer data provided, will this customer review any product in the next 3 months? Give Yes or No as an answer.",
    ),
    (
        "rel-amazon/item-churn",
        "This task is to predict if the product will receive any reviews in the next 3 months or not.",
        "Based on the product data provided, will the product receive any reviews in the next 3 months? Give Yes or No as an answer.",
    ),
    (
        "rel-amazon/user-ltv",
        "This task is to predict the $ value of the total number of products each user will buy and review in the next 3 months.",
        "What is the total dollar value of products this user will buy and review in the next 3 months? Provide a float numerical answer.",
    ),
    (
        "rel-amazon/item-ltv",
        "This task is to predict the $ value of the total number of purchases and reviews each product will receive in the next 3 months.",
        "What is the total dollar value of purchases this product will receive in the next 3 months? Provide a float numerical answer.",
    ),
    (
        "rel-stack/post-votes",
        "This task is to predict how many votes this user's post will receive in the next 3 months.",
        "Based on records of activity, how many votes will this user's post receive in the next 3 months? Give an integer as an answer.",
    ),
    (
        "rel-stack/user-engagement",
        "This task is to predict if a user will make any votes, posts, or comments in the next 3 months or not.",
        "Based on records of activity, will this user make any votes, posts, or comments in the next 3 months? Give Yes or No as an answer.",
    ),
    (
        "rel-stack/user-badge",
        "This task is to predict if a user will receive a new badge in the next 3 months or not.",
        "Based on records of activity, will this user receive a new badge in the next 3 months? Give Yes or No as an answer.",
    ),
    (
        "rel-avito/user-visits",
        "This task is to predict whether this customer will visit more than one Ad in the next 4 days or not.",
        "Will this customer visit more than one Ad in the next 4 days? Give Yes or No as an answer.",
    ),
    (
        "rel-avito/user-clicks",
        "This task is to predict whether this customer will click on more than one Ads in the next 4 days or not.",
        "Will this customer click on more than one Ads in the next 4 days? Give Yes or No as an answer.",
    ),
    (
        "rel-avito/ad-ctr",
        "Assuming the Ad will be clicked in the next 4 days, this task is to predict the Click-Through-Rate (CTR) for each Ad.",
        "What is the Click-Through-Rate (CTR) for this Ad?",
    ),
    (
        "rel-f1/driver-position",
        "This task is to predict the average finishing position of each driver across all races in the next 2 months.",
        "What is the average finishing position of this driver across all races in the next 2 months? Provide a float numerical answer.",
    ),
    (
        "rel-f1/driver-dnf",
        "This task is to predict if this driver will finish a race in the next 1 month or not.",
        "Will this driver finish a race in the next 1 month? Give Yes or No as an answer.",
    ),
    (
        "rel-f1/driver-top3",
        "This task is to predict if this driver will qualify in the top-3 for a race in the next 1 month or not.",
        "Will this driver qualify in the top-3 for a race in the next 1 month? Give Yes or No as an answer.",
    ),
    (
        "synth/churn",
        "This task is to predict if the user made no purchase in the last 30 days.",
        "Did this user make no purchase in the last 30 days? Give Yes or No as an answer.",
    ),
    (
        "synth/event-count",
        "This task is to predict how many events the user had in the last 30 days.",
        "How many events did this user have in the last 30 days? Give an integer as an answer.",
    ),
];

pub fn lookup(task_id: &str) -> Option<(&'static str, &'static str)> {
    TEMPLATES.iter().find(|(id, _, _)| *id == task_id).map(|&(_, d, q)| (d, q))
}
